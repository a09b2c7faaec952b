import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereosplat.cloud import (
    SH_C0,
    GaussianCloud,
    PlyFormatError,
    build_covariance,
    feature_to_rgb,
    load_ply,
    logit,
    project_covariance,
    quat_to_rotation,
    rgb_to_feature,
    save_ply,
    sigmoid,
)


def make_cloud(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianCloud(
        positions=rng.standard_normal((n, 3)),
        rotations=rng.standard_normal((n, 4)),
        log_scales=rng.uniform(-3, 0, (n, 3)),
        opacity_logits=rng.uniform(-2, 2, n),
        colors=rng.standard_normal((n, 3)),
    )


class TestBuildCovariance:
    def test_identity(self):
        cov = build_covariance([1, 0, 0, 0], [0, 0, 0])
        assert np.allclose(cov, np.eye(3), atol=1e-12)

    def test_rotation_maps_variance_between_axes(self):
        # 90 degrees about z with x-variance 4 lands the variance on y.
        quat = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
        cov = build_covariance(quat, [np.log(2.0), 0.0, 0.0])
        rot = quat_to_rotation(quat)
        oracle = rot @ np.diag([4.0, 1.0, 1.0]) @ rot.T
        assert np.allclose(cov, oracle, atol=1e-12)
        assert np.allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_eigenvalues_match_squared_scales(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            quat = rng.standard_normal(4)
            log_scale = rng.uniform(-2, 1, 3)
            cov = build_covariance(quat, log_scale)
            eig = np.sort(np.linalg.eigvalsh(cov))
            expected = np.sort(np.exp(2 * log_scale))
            assert np.allclose(eig, expected, rtol=1e-9)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            cov = build_covariance(rng.standard_normal(4), rng.uniform(-3, 1, 3))
            assert np.abs(cov - cov.T).max() < 1e-12
            assert np.linalg.eigvalsh(cov).min() > -1e-12

    @given(
        scale=st.floats(min_value=0.05, max_value=20.0),
        sign=st.sampled_from([-1.0, 1.0]),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=100, deadline=None)
    def test_quaternion_sign_and_scale_invariance(self, scale, sign, seed):
        rng = np.random.default_rng(seed)
        quat = rng.standard_normal(4)
        if np.linalg.norm(quat) < 1e-3:
            quat = np.array([1.0, 0.2, -0.3, 0.4])
        log_scale = rng.uniform(-2, 1, 3)
        base = build_covariance(quat, log_scale)
        other = build_covariance(sign * scale * quat, log_scale)
        assert np.allclose(base, other, rtol=1e-9, atol=1e-12)

    def test_degenerate_quaternion_asserts(self):
        with pytest.raises(AssertionError):
            build_covariance([0, 0, 0, 0], [0, 0, 0])


class TestProjectCovariance:
    def test_diagonal_with_dilation(self):
        jac = np.array([[50.0, 0, 0], [0, 50.0, 0]])
        out = project_covariance(np.eye(3), np.eye(3), jac)
        assert np.allclose(out, [[2500.3, 0], [0, 2500.3]])

    def test_isotropic_rotation_invariance(self):
        jac = np.array([[50.0, 0, 0], [0, 50.0, 0]])
        rot = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
        assert np.allclose(
            project_covariance(np.eye(3), rot, jac),
            project_covariance(np.eye(3), np.eye(3), jac),
        )

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            cov = build_covariance(rng.standard_normal(4), rng.uniform(-2, 1, 3))
            jac = rng.standard_normal((2, 3))
            theta = rng.uniform(0, 2 * np.pi)
            c, s = np.cos(theta), np.sin(theta)
            rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
            expected = jac @ rot @ cov @ rot.T @ jac.T
            got = project_covariance(cov, rot, jac) - 0.3 * np.eye(2)
            assert np.allclose(got, expected, atol=1e-10)


class TestActivations:
    def test_sigmoid_at_zero(self):
        cloud = make_cloud()
        cloud.opacity_logits[0] = 0.0
        assert np.isclose(cloud.activated(0)[3], 0.5)

    def test_zero_feature_gives_gray(self):
        assert np.allclose(feature_to_rgb([0.0, 0.0, 0.0]), [0.5, 0.5, 0.5])

    def test_feature_inversion_gives_pure_red(self):
        feature = [(1 - 0.5) / SH_C0, -0.5 / SH_C0, -0.5 / SH_C0]
        assert np.allclose(feature_to_rgb(feature), [1.0, 0.0, 0.0], atol=1e-12)

    def test_rgb_feature_round_trip(self):
        rng = np.random.default_rng(5)
        rgb = rng.uniform(0, 1, (10, 3))
        assert np.allclose(feature_to_rgb(rgb_to_feature(rgb)), rgb, atol=1e-12)

    def test_logit_sigmoid_round_trip(self):
        values = np.array([1e-6, 0.1, 0.5, 0.9, 1 - 1e-9])
        assert np.allclose(sigmoid(logit(values)), values, rtol=1e-9)

    def test_activated_index_bounds(self):
        cloud = make_cloud(2)
        with pytest.raises(AssertionError):
            cloud.activated(2)


class TestPly:
    def test_round_trip_bit_exact(self):
        cloud = make_cloud(3, seed=9)
        # The PLY stores float32; round-trip identity holds for values that
        # are exactly representable there.
        for name in ("positions", "rotations", "log_scales", "opacity_logits", "colors"):
            arr = getattr(cloud, name)
            arr[:] = arr.astype(np.float32).astype(np.float64)
        restored = load_ply(save_ply(cloud))
        for name in ("positions", "rotations", "log_scales", "opacity_logits", "colors"):
            assert np.array_equal(getattr(restored, name), getattr(cloud, name))

    def test_empty_cloud_round_trip(self):
        data = save_ply(GaussianCloud.empty())
        assert b"element vertex 0" in data
        restored = load_ply(data)
        assert len(restored) == 0

    def test_save_is_deterministic(self):
        cloud = make_cloud(5, seed=1)
        assert save_ply(cloud) == save_ply(cloud)

    def test_truncated_payload_rejected(self):
        cloud = make_cloud(10)
        data = save_ply(cloud)
        header_end = data.index(b"end_header\n") + len(b"end_header\n")
        truncated = data[: header_end + 5 * 17 * 4]
        with pytest.raises(PlyFormatError, match="truncated"):
            load_ply(truncated)

    def test_bad_magic_rejected(self):
        with pytest.raises(PlyFormatError, match="magic"):
            load_ply(b"not a ply at all")

    def test_wrong_properties_rejected(self):
        data = save_ply(make_cloud(1))
        with pytest.raises(PlyFormatError, match="properties"):
            load_ply(data.replace(b"property float f_dc_0", b"property float weird", 1))

    def test_trailing_bytes_rejected(self):
        data = save_ply(make_cloud(1))
        with pytest.raises(PlyFormatError, match="trailing"):
            load_ply(data + b"\x00\x00\x00\x00")

    @given(seed=st.integers(min_value=0, max_value=10_000), n=st.integers(min_value=0, max_value=8))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, seed, n):
        rng = np.random.default_rng(seed)
        cloud = GaussianCloud(
            positions=rng.standard_normal((n, 3)).astype(np.float32),
            rotations=rng.standard_normal((n, 4)).astype(np.float32),
            log_scales=rng.standard_normal((n, 3)).astype(np.float32),
            opacity_logits=rng.standard_normal(n).astype(np.float32),
            colors=rng.standard_normal((n, 3)).astype(np.float32),
        )
        restored = load_ply(save_ply(cloud))
        for name in ("positions", "rotations", "log_scales", "opacity_logits", "colors"):
            assert np.array_equal(getattr(restored, name), getattr(cloud, name))


class TestCloudContainer:
    def test_select_and_concat_alignment(self):
        cloud = make_cloud(6, seed=3)
        subset = cloud.select(np.array([0, 2, 4]))
        assert len(subset) == 3
        assert np.array_equal(subset.positions, cloud.positions[[0, 2, 4]])
        merged = GaussianCloud.concatenate([subset, cloud.select([1])])
        assert len(merged) == 4
        assert np.array_equal(merged.opacity_logits[-1:], cloud.opacity_logits[[1]])

    def test_clone_is_independent(self):
        cloud = make_cloud(2)
        twin = cloud.clone()
        twin.positions += 1.0
        assert not np.allclose(cloud.positions, twin.positions)

    def test_mismatched_rows_rejected(self):
        with pytest.raises(ValueError):
            GaussianCloud(
                positions=np.zeros((2, 3)),
                rotations=np.zeros((3, 4)),
                log_scales=np.zeros((2, 3)),
                opacity_logits=np.zeros(2),
                colors=np.zeros((2, 3)),
            )
