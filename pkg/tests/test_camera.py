import numpy as np
import pytest

from stereosplat.camera import (
    CameraModel,
    CorrespondenceSet,
    project_point,
    project_points,
    projection_jacobian,
    translate_camera,
    triangulate,
)

from conftest import random_camera


class TestCameraModel:
    def test_rejects_non_orthonormal_rotation(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-6
        with pytest.raises(ValueError, match="orthonormal"):
            CameraModel(100, 100, 50, 50, 100, 100, bad, np.zeros(3))

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            CameraModel(100, 100, 50, 50, 100, 100, flip, np.zeros(3))

    def test_rejects_bad_scalars(self):
        with pytest.raises(ValueError):
            CameraModel(-1, 100, 50, 50, 100, 100, np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            CameraModel(100, 100, 50, 50, 0, 100, np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            CameraModel(100, 100, 50, 50, 100, 100, np.eye(3), np.zeros(3), near=0.0)

    def test_center_inverts_pose(self, identity_cam):
        assert np.allclose(identity_cam.center, np.zeros(3))
        rng = np.random.default_rng(1)
        cam = random_camera(rng)
        assert np.allclose(cam.rotation @ cam.center + cam.translation, 0.0, atol=1e-12)


class TestProjectPoint:
    def test_on_axis_point_maps_to_principal_point(self, identity_cam):
        pixel, depth, valid = project_point(identity_cam, [0, 0, 2])
        assert valid
        assert depth == 2.0
        assert np.allclose(pixel, [50.0, 50.0])

    def test_offset_point(self, identity_cam):
        pixel, depth, valid = project_point(identity_cam, [1, 0, 2])
        assert valid
        assert np.allclose(pixel, [100.0, 50.0])
        assert depth == 2.0

    def test_behind_near_plane_flagged_invalid(self, identity_cam):
        _, _, valid = project_point(identity_cam, [0, 0, 0.0])
        assert not valid
        _, _, valid = project_point(identity_cam, [0, 0, -1.0])
        assert not valid

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            cam = random_camera(rng)
            point = rng.uniform(-1, 1, 3) + np.array([0, 0, 3.0])
            pixel, depth, valid = project_point(cam, point)
            # Independent oracle: homogeneous projection matrix then divide.
            hom = cam.projection_matrix @ np.append(point, 1.0)
            if hom[2] <= cam.near:
                assert not valid
                continue
            assert valid
            assert np.allclose(pixel, hom[:2] / hom[2], atol=1e-12)
            assert np.isclose(depth, hom[2], atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        cam = random_camera(rng)
        pts = rng.uniform(-1, 1, (50, 3)) + [0, 0, 3.0]
        pix, z, valid = project_points(cam, pts)
        for i in range(len(pts)):
            p, d, v = project_point(cam, pts[i])
            assert v == valid[i]
            if v:
                assert np.allclose(pix[i], p)
                assert np.isclose(z[i], d)


class TestProjectionJacobian:
    def test_on_axis(self, identity_cam):
        jac = projection_jacobian(identity_cam, [0, 0, 2])
        assert np.allclose(jac, [[50, 0, 0], [0, 50, 0]])

    def test_off_axis(self, identity_cam):
        jac = projection_jacobian(identity_cam, [1, 0, 2])
        assert np.allclose(jac, [[50, 0, -25], [0, 50, 0]])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(1000):
            cam = random_camera(rng)
            p_cam = rng.uniform([-1, -1, 0.5], [1, 1, 5.0])
            jac = projection_jacobian(cam, p_cam)
            world = cam.rotation.T @ (p_cam - cam.translation)
            fd = np.empty((2, 3))
            for axis in range(3):
                delta = cam.rotation.T[:, axis] * h
                plus, _, _ = project_point(cam, world + delta)
                minus, _, _ = project_point(cam, world - delta)
                fd[:, axis] = (plus - minus) / (2 * h)
            assert np.allclose(jac, fd, rtol=1e-6, atol=1e-6)


class TestTranslateCamera:
    def test_zero_shift_is_identity(self, identity_cam):
        assert translate_camera(identity_cam, 0.0) is identity_cam

    def test_identity_pose_moves_along_world_x(self, identity_cam):
        moved = translate_camera(identity_cam, 0.4)
        assert np.allclose(moved.center, [0.4, 0, 0])

    def test_rotated_camera_moves_along_local_x(self):
        rng = np.random.default_rng(11)
        cam = random_camera(rng)
        moved = translate_camera(cam, 0.2)
        # Oracle: compose the pose as a 4x4 and move the origin along the
        # camera x-axis expressed in world coordinates.
        local_x_world = cam.rotation.T @ np.array([1.0, 0.0, 0.0])
        assert np.allclose(moved.center - cam.center, 0.2 * local_x_world, atol=1e-12)
        assert np.array_equal(moved.rotation, cam.rotation)
        assert moved.fx == cam.fx and moved.width == cam.width

    def test_disparity_identity_for_fronto_parallel(self, identity_cam):
        # Pixel shift is exactly fx*b/z for an identity-rotation camera.
        rng = np.random.default_rng(12)
        for _ in range(50):
            point = rng.uniform([-0.5, -0.5, 1.0], [0.5, 0.5, 5.0])
            b = rng.uniform(-0.5, 0.5)
            base, z, _ = project_point(identity_cam, point)
            shifted, _, _ = project_point(translate_camera(identity_cam, b), point)
            assert np.isclose(shifted[0], base[0] - identity_cam.fx * b / z, atol=1e-9)
            assert np.isclose(shifted[1], base[1], atol=1e-12)


def _stereo_rig(fx=1000.0, size=1200, baseline=1.0):
    cam_a = CameraModel(fx, fx, (size - 1) / 2, (size - 1) / 2, size, size, np.eye(3), np.zeros(3))
    cam_b = translate_camera(cam_a, baseline)
    return cam_a, cam_b


class TestTriangulate:
    def test_round_trip_exact(self):
        cam_a, cam_b = _stereo_rig()
        point = np.array([0.2, -0.1, 5.0])
        pa, _, _ = project_point(cam_a, point)
        pb, _, _ = project_point(cam_b, point)
        result = triangulate(cam_a, cam_b, [pa[0], pa[1], pb[0], pb[1]])
        assert result.valid
        assert np.linalg.norm(result.point - point) <= 1e-6
        assert result.reproj_error < 1e-6

    def test_noisy_matches_within_tolerance(self):
        cam_a, cam_b = _stereo_rig()
        rng = np.random.default_rng(42)
        point = np.array([0.2, -0.1, 5.0])
        pa, _, _ = project_point(cam_a, point)
        pb, _, _ = project_point(cam_b, point)
        errors = []
        for _ in range(100):
            noise = rng.normal(0.0, 0.5, 4)
            match = [pa[0] + noise[0], pa[1] + noise[1], pb[0] + noise[2], pb[1] + noise[3]]
            result = triangulate(cam_a, cam_b, match, max_reproj_px=5.0)
            assert result.valid
            errors.append(np.linalg.norm(result.point - point))
        assert np.percentile(errors, 95) <= 0.05

    def test_behind_camera_rejected(self):
        cam_a, cam_b = _stereo_rig()
        # Diverging rays meet behind the cameras.
        result = triangulate(cam_a, cam_b, [800.0, 599.5, 900.0, 599.5])
        assert not result.valid

    def test_reprojection_gate(self):
        cam_a, cam_b = _stereo_rig()
        point = np.array([0.2, -0.1, 5.0])
        pa, _, _ = project_point(cam_a, point)
        pb, _, _ = project_point(cam_b, point)
        # Off-epipolar corruption: the rays become skew and the residual
        # lands in the reprojection error. (Pure horizontal shifts slide
        # along the epipolar line and triangulate to a different point.)
        corrupted = [pa[0], pa[1] + 50.0, pb[0], pb[1]]
        assert not triangulate(cam_a, cam_b, corrupted, max_reproj_px=2.0).valid

    def test_round_trip_many_random(self):
        rng = np.random.default_rng(5)
        cam_a, cam_b = _stereo_rig()
        for _ in range(100):
            point = rng.uniform([-1, -1, 2.0], [1, 1, 8.0])
            pa, _, va = project_point(cam_a, point)
            pb, _, vb = project_point(cam_b, point)
            if not (va and vb):
                continue
            result = triangulate(cam_a, cam_b, [*pa, *pb])
            assert result.valid
            assert np.linalg.norm(result.point - point) <= 1e-6


class TestCorrespondenceSet:
    def test_confidence_bounds(self):
        with pytest.raises(ValueError, match="confidence"):
            CorrespondenceSet("a", "b", [[0, 0, 0, 0, 1.5]])

    def test_bounds_check(self, identity_cam):
        cset = CorrespondenceSet("a", "b", [[150.0, 0, 0, 0, 0.9]])
        with pytest.raises(ValueError, match="outside image bounds"):
            cset.check_bounds(identity_cam, identity_cam)

    def test_valid_set_passes(self, identity_cam):
        cset = CorrespondenceSet("a", "b", [[10, 10, 20, 10, 0.9], [5, 5, 6, 5, 1.0]])
        cset.check_bounds(identity_cam, identity_cam)
        assert len(cset) == 2
