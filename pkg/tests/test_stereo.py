import numpy as np
import pytest

from stereosplat.camera import CameraModel, translate_camera
from stereosplat.renderer import render, render_backward
from stereosplat.stereo import (
    DisparityMap,
    compute_disparity,
    consistency_loss,
    sample_shift,
    warp_right_to_left,
)
from stereosplat.synthetic import (
    SyntheticSceneSpec,
    finite_diff_gradients,
    gradient_check_scene,
    make_scene,
)


class TestComputeDisparity:
    def test_paper_formula(self):
        depth = np.full((8, 8), 2.0)
        alpha = np.ones((8, 8))
        disp = compute_disparity(depth, f=100.0, d_cam=0.4, alpha_left=alpha)
        assert np.allclose(disp.values, 20.0)
        assert disp.valid_mask.all()

    def test_zero_shift_zero_disparity(self):
        depth = np.full((4, 4), 2.0)
        disp = compute_disparity(depth, 100.0, 0.0, np.ones((4, 4)))
        assert np.count_nonzero(disp.values) == 0

    def test_negative_shift_flips_sign(self):
        depth = np.full((4, 4), 2.0)
        disp = compute_disparity(depth, 100.0, -0.4, np.ones((4, 4)))
        assert np.allclose(disp.values, -20.0)

    def test_low_alpha_masked(self):
        depth = np.full((4, 4), 2.0)
        alpha = np.zeros((4, 4))
        alpha[1, 1] = 0.9
        disp = compute_disparity(depth, 100.0, 0.4, alpha, alpha_min=0.5)
        assert disp.valid_mask.sum() == 1
        assert disp.valid_mask[1, 1]

    def test_nonpositive_focal_rejected(self):
        with pytest.raises(ValueError):
            compute_disparity(np.ones((2, 2)), 0.0, 0.4, np.ones((2, 2)))


class TestWarp:
    def test_zero_disparity_is_identity(self):
        rng = np.random.default_rng(0)
        image = rng.uniform(0, 1, (6, 8, 3))
        disp = DisparityMap(np.zeros((6, 8)), np.ones((6, 8), dtype=bool))
        shifted, mask = warp_right_to_left(image, disp)
        assert np.array_equal(shifted, image)
        assert mask.all()

    def test_integer_disparity_matches_indexing_oracle(self):
        h, w = 4, 12
        image = np.repeat((np.arange(w) / w)[None, :, None], h, axis=0)
        image = np.repeat(image, 3, axis=2)
        disp = DisparityMap(np.full((h, w), 2.0), np.ones((h, w), dtype=bool))
        shifted, mask = warp_right_to_left(image, disp)
        for c in range(w):
            if c < 2:
                assert not mask[0, c]
            else:
                assert mask[0, c]
                assert np.allclose(shifted[0, c], image[0, c - 2])

    def test_constant_image_is_warp_invariant(self):
        image = np.full((5, 9, 3), 0.37)
        disp = DisparityMap(np.full((5, 9), 1.7), np.ones((5, 9), dtype=bool))
        shifted, mask = warp_right_to_left(image, disp)
        assert np.allclose(shifted[mask], 0.37)

    def test_out_of_bounds_masked_not_clamped(self):
        image = np.random.default_rng(1).uniform(0, 1, (3, 6, 3))
        disp = DisparityMap(np.full((3, 6), 100.0), np.ones((3, 6), dtype=bool))
        shifted, mask = warp_right_to_left(image, disp)
        assert not mask.any()
        assert np.count_nonzero(shifted) == 0


def plane_setup(tmp_path, d_cam, perturb=1.0):
    spec = SyntheticSceneSpec(kind="textured-plane", seed=3)
    scene = make_scene(spec, tmp_path / "plane")
    vid = scene.bundle.train_ids[0]
    cam = scene.bundle.cameras[vid]
    fb_left, _ = render(scene.cloud, cam)
    fb_right, _ = render(scene.cloud, translate_camera(cam, d_cam))
    return scene, cam, fb_left, fb_right, perturb


class TestConsistencyLoss:
    @pytest.mark.parametrize("d_cam", [-0.4, -0.1, 0.1, 0.4])
    def test_plane_with_exact_depth_is_consistent(self, tmp_path, d_cam):
        _, cam, fb_left, fb_right, _ = plane_setup(tmp_path, d_cam)
        result = consistency_loss(
            fb_left.color, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam
        )
        assert result.sample_mask.sum() > 0.5 * fb_left.depth.size
        assert result.value < 1e-3

    def test_constant_images_zero_loss(self):
        cam = CameraModel(40, 40, 7.5, 7.5, 16, 16, np.eye(3), np.zeros(3))
        image = np.full((16, 16, 3), 0.6)
        depth = np.full((16, 16), 2.0)
        alpha = np.ones((16, 16))
        result = consistency_loss(image, image, depth, alpha, cam, 0.3)
        assert result.value < 1e-12

    def test_perturbed_depth_increases_loss_and_gradient_restores(self, tmp_path):
        d_cam = 0.2
        scene, cam, fb_left, fb_right, _ = plane_setup(tmp_path, d_cam)
        base = consistency_loss(
            fb_left.color, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam
        )
        perturbed_depth = fb_left.depth * 1.10
        perturbed = consistency_loss(
            fb_left.color, fb_right.color, perturbed_depth, fb_left.alpha, cam, d_cam
        )
        assert perturbed.value > base.value
        # Depth was inflated, so descending the loss must push it back down:
        # positive gradient on >=95% of masked pixels.
        grad = perturbed.d_depth_left[perturbed.sample_mask]
        assert (grad > 0).mean() >= 0.95

    def test_empty_mask_returns_zero(self):
        cam = CameraModel(40, 40, 7.5, 7.5, 16, 16, np.eye(3), np.zeros(3))
        rng = np.random.default_rng(2)
        image = rng.uniform(0, 1, (16, 16, 3))
        depth = np.full((16, 16), 2.0)
        alpha = np.zeros((16, 16))
        result = consistency_loss(image, image, depth, alpha, cam, 0.3)
        assert result.value == 0.0
        assert np.count_nonzero(result.d_i_right) == 0
        assert np.count_nonzero(result.d_depth_left) == 0

    def test_masked_region_contents_do_not_matter(self):
        cam = CameraModel(40, 40, 7.5, 7.5, 16, 16, np.eye(3), np.zeros(3))
        rng = np.random.default_rng(3)
        left = rng.uniform(0, 1, (16, 16, 3))
        right = rng.uniform(0, 1, (16, 16, 3))
        depth = np.full((16, 16), 2.0)
        alpha = np.ones((16, 16))
        d_cam = 0.3  # disparity 6 px: left columns sample out of range
        base = consistency_loss(left, right, depth, alpha, cam, d_cam)
        tampered = right.copy()
        # Only samples at x = c - 6 are read; columns beyond 15 - 6 are never
        # sampled by any in-range pixel.
        tampered[:, 12:] = rng.uniform(0, 1, tampered[:, 12:].shape)
        out = consistency_loss(left, tampered, depth, alpha, cam, d_cam)
        assert out.value == base.value

    def test_sign_symmetry_on_plane(self, tmp_path):
        spec = SyntheticSceneSpec(kind="textured-plane", seed=5)
        scene = make_scene(spec, tmp_path / "plane2")
        vid = scene.bundle.train_ids[0]
        cam = scene.bundle.cameras[vid]
        fb_left, _ = render(scene.cloud, cam)
        for d_cam in (0.25, -0.25):
            fb_right, _ = render(scene.cloud, translate_camera(cam, d_cam))
            result = consistency_loss(
                fb_left.color, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam
            )
            assert result.value < 1e-3

    def test_gradients_match_finite_differences(self):
        cloud, cam = gradient_check_scene(12, n_gaussians=8)
        rng = np.random.default_rng(13)
        d_cam = 0.12
        fb_left, state_left = render(cloud, cam)
        fb_right, state_right = render(cloud, translate_camera(cam, d_cam))
        target = fb_left.color + rng.choice([-1, 1], fb_left.color.shape) * rng.uniform(
            0.05, 0.15, fb_left.color.shape
        )
        result = consistency_loss(
            target, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam, alpha_min=0.05
        )
        analytic = render_backward(state_left, d_depth=result.d_depth_left)
        analytic.add(render_backward(state_right, d_color=result.d_i_right))

        def loss(c, cm):
            left, _ = render(c, cm)
            right, _ = render(c, translate_camera(cm, d_cam))
            return consistency_loss(
                target, right.color, left.depth, left.alpha, cm, d_cam, alpha_min=0.05
            ).value

        numeric = finite_diff_gradients(cloud, cam, loss, step=1e-4)
        for name in ("d_positions", "d_rotations", "d_log_scales", "d_opacity_logits", "d_colors"):
            a = getattr(analytic, name)
            b = getattr(numeric, name)
            rel = np.abs(a - b) / np.maximum(np.abs(b), 1e-6)
            assert rel.max() <= 1e-3, f"{name}: {rel.max():.2e}"

    def test_gradient_path_toggles(self):
        cloud, cam = gradient_check_scene(14, n_gaussians=6)
        rng = np.random.default_rng(15)
        d_cam = 0.12
        fb_left, _ = render(cloud, cam)
        fb_right, _ = render(cloud, translate_camera(cam, d_cam))
        target = rng.uniform(0, 1, fb_left.color.shape)
        both = consistency_loss(
            target, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam, alpha_min=0.05
        )
        no_img = consistency_loss(
            target, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam,
            alpha_min=0.05, grad_image=False,
        )
        no_depth = consistency_loss(
            target, fb_right.color, fb_left.depth, fb_left.alpha, cam, d_cam,
            alpha_min=0.05, grad_depth=False,
        )
        assert np.count_nonzero(no_img.d_i_right) == 0
        assert np.count_nonzero(no_depth.d_depth_left) == 0
        assert no_img.value == both.value == no_depth.value
        assert np.array_equal(no_depth.d_i_right, both.d_i_right)
        assert np.array_equal(no_img.d_depth_left, both.d_depth_left)


class TestSampleShift:
    def test_bounds_and_mean(self):
        rng = np.random.default_rng(0)
        samples = np.array([sample_shift(rng, 0.4) for _ in range(100_000)])
        assert samples.min() >= -0.4 and samples.max() <= 0.4
        assert abs(samples.mean()) < 0.01

    def test_seeded_reproducibility(self):
        a = [sample_shift(np.random.default_rng(7), 0.4) for _ in range(5)]
        b = [sample_shift(np.random.default_rng(7), 0.4) for _ in range(5)]
        assert a == b

    def test_bound_scaling(self):
        rng = np.random.default_rng(1)
        samples = [sample_shift(rng, 0.1) for _ in range(1000)]
        assert min(samples) >= -0.1 and max(samples) <= 0.1

    def test_nonpositive_bound_rejected(self):
        with pytest.raises(ValueError):
            sample_shift(np.random.default_rng(0), 0.0)
