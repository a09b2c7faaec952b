import numpy as np
import pytest

from stereosplat.losses import color_loss, dssim_loss, l1_loss, psnr, ssim

C1 = 0.01**2
C2 = 0.03**2


def rand_pair(seed, h=16, w=16):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (h, w, 3)), rng.uniform(0, 1, (h, w, 3))


class TestL1:
    def test_identical_is_zero(self):
        img, _ = rand_pair(0)
        assert l1_loss(img, img).value == 0.0

    def test_constant_offset(self):
        a = np.full((4, 4, 3), 0.5)
        b = np.full((4, 4, 3), 0.25)
        assert np.isclose(l1_loss(a, b).value, 0.25)

    def test_matches_loop_oracle(self):
        a, b = rand_pair(1)
        expected = 0.0
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                for k in range(3):
                    expected += abs(a[i, j, k] - b[i, j, k])
        expected /= a.size
        assert np.isclose(l1_loss(a, b).value, expected, atol=1e-12)

    def test_adjoint_is_scaled_sign(self):
        a, b = rand_pair(2)
        out = l1_loss(a, b)
        assert np.allclose(out.d_image, np.sign(a - b) / a.size)

    def test_symmetry_in_value(self):
        a, b = rand_pair(3)
        assert np.isclose(l1_loss(a, b).value, l1_loss(b, a).value)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_images_score_one(self):
        img, _ = rand_pair(4)
        assert abs(ssim(img, img) - 1.0) <= 1e-9
        assert abs(dssim_loss(img, img).value) <= 1e-9

    def test_constant_images_closed_form(self):
        ones = np.ones((16, 16, 3))
        zeros = np.zeros((16, 16, 3))
        # For constant images the variance terms vanish and SSIM reduces to
        # C1 / (mu1^2 + mu2^2 + C1).
        expected = C1 / (1.0 + C1)
        assert abs(ssim(ones, zeros) - expected) <= 1e-9

    def test_never_exceeds_one(self):
        for seed in range(5):
            a, b = rand_pair(seed)
            assert ssim(a, b) <= 1.0 + 1e-12

    def test_value_symmetry(self):
        a, b = rand_pair(6)
        assert np.isclose(ssim(a, b), ssim(b, a), atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        a, b = rand_pair(7)
        out = dssim_loss(a, b)
        rng = np.random.default_rng(8)
        h = 1e-5
        # Probe a random subset of pixels; each is an independent check.
        for _ in range(40):
            i, j, k = rng.integers(0, 16), rng.integers(0, 16), rng.integers(0, 3)
            saved = a[i, j, k]
            a[i, j, k] = saved + h
            plus = dssim_loss(a, b).value
            a[i, j, k] = saved - h
            minus = dssim_loss(a, b).value
            a[i, j, k] = saved
            fd = (plus - minus) / (2 * h)
            assert np.isclose(out.d_image[i, j, k], fd, rtol=1e-3, atol=1e-9)


class TestColorLoss:
    def test_beta_zero_is_l1(self):
        a, b = rand_pair(9)
        assert color_loss(a, b, beta=0.0).value == l1_loss(a, b).value

    def test_beta_one_is_dssim(self):
        a, b = rand_pair(10)
        assert color_loss(a, b, beta=1.0).value == dssim_loss(a, b).value

    def test_identical_images_zero(self):
        img, _ = rand_pair(11)
        assert abs(color_loss(img, img, beta=0.2).value) <= 1e-12

    def test_combination(self):
        a, b = rand_pair(12)
        combined = color_loss(a, b, beta=0.2)
        expected = 0.8 * l1_loss(a, b).value + 0.2 * dssim_loss(a, b).value
        assert np.isclose(combined.value, expected, atol=1e-12)
        expected_adj = 0.8 * l1_loss(a, b).d_image + 0.2 * dssim_loss(a, b).d_image
        assert np.allclose(combined.d_image, expected_adj, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        a, b = rand_pair(13)
        out = color_loss(a, b, beta=0.2)
        h = 1e-5
        rng = np.random.default_rng(14)
        for _ in range(30):
            i, j, k = rng.integers(0, 16), rng.integers(0, 16), rng.integers(0, 3)
            saved = a[i, j, k]
            a[i, j, k] = saved + h
            plus = color_loss(a, b, beta=0.2).value
            a[i, j, k] = saved - h
            minus = color_loss(a, b, beta=0.2).value
            a[i, j, k] = saved
            fd = (plus - minus) / (2 * h)
            assert np.isclose(out.d_image[i, j, k], fd, rtol=1e-3, atol=1e-9)

    def test_beta_out_of_range_rejected(self):
        a, b = rand_pair(15)
        with pytest.raises(ValueError):
            color_loss(a, b, beta=1.5)
        with pytest.raises(ValueError):
            color_loss(a, b, beta=-0.1)


class TestPsnr:
    def test_identical_is_infinite(self):
        img, _ = rand_pair(16)
        assert psnr(img, img) == float("inf")

    def test_known_mse(self):
        a = np.zeros((10, 10, 3))
        b = np.full((10, 10, 3), 0.1)
        assert np.isclose(psnr(a, b), 20.0, atol=1e-9)

    def test_matches_loop_oracle(self):
        a, b = rand_pair(17)
        total = 0.0
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                for k in range(3):
                    total += (a[i, j, k] - b[i, j, k]) ** 2
        expected = 10 * np.log10(1.0 / (total / a.size))
        assert np.isclose(psnr(a, b), expected, atol=1e-9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))
