"""Pinhole cameras, projection, stereo translation, and two-view triangulation.

Conventions used throughout the package:

Camera frame (right-handed):
  - +x right, +y down, +z forward (optical axis into the scene)
  - image row index grows with +y, column index with +x

World-to-camera mapping:
  x_cam = rotation @ p_world + translation

so the optical center in world coordinates is ``-rotation.T @ translation``.
With this convention, translating a camera along its local +x axis moves the
viewpoint to the right and produces purely horizontal (positive-x) pixel
disparity for a static scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CameraModel",
    "CorrespondenceSet",
    "TriangulationResult",
    "project_point",
    "project_points",
    "projection_jacobian",
    "translate_camera",
    "triangulate",
]

ORTHONORMALITY_TOL = 1e-9


def _as_array(value, shape, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera with a rigid world-to-camera pose.

    ``near`` is the minimum valid camera-space depth: points with z <= near
    project as invalid.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    near: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_array(self.rotation, (3, 3), "rotation"))
        object.__setattr__(self, "translation", _as_array(self.translation, (3,), "translation"))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.near > 0:
            raise ValueError("near plane must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err >= ORTHONORMALITY_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must have determinant +1")
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @property
    def center(self) -> np.ndarray:
        """Optical center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix mapping homogeneous world points to homogeneous pixels."""
        rt = np.hstack([self.rotation, self.translation[:, None]])
        return self.intrinsics @ rt

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


@dataclass
class CorrespondenceSet:
    """Pixel matches between two named views.

    ``matches`` is (M, 5): x_a, y_a, x_b, y_b, confidence. Confidence lives in
    [0, 1]; coordinate bounds are checked against cameras at use time because
    the set itself does not know the image sizes.
    """

    view_a: str
    view_b: str
    matches: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    def __post_init__(self):
        self.matches = np.asarray(self.matches, dtype=np.float64).reshape(-1, 5)
        conf = self.matches[:, 4]
        if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
            raise ValueError("confidence values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.matches.shape[0]

    def check_bounds(self, cam_a: CameraModel, cam_b: CameraModel) -> None:
        xa, ya, xb, yb = (self.matches[:, i] for i in range(4))
        ok_a = (xa >= 0) & (xa <= cam_a.width - 1) & (ya >= 0) & (ya <= cam_a.height - 1)
        ok_b = (xb >= 0) & (xb <= cam_b.width - 1) & (yb >= 0) & (yb <= cam_b.height - 1)
        bad = np.count_nonzero(~(ok_a & ok_b))
        if bad:
            raise ValueError(
                f"{bad} matches of pair ({self.view_a}, {self.view_b}) fall outside image bounds"
            )


def project_point(cam: CameraModel, p) -> tuple[np.ndarray, float, bool]:
    """Project a world point, returning (pixel, depth, valid).

    valid is False when the point sits at or behind the near plane; pixel
    content is unspecified in that case (never raises).
    """
    p_cam = cam.rotation @ np.asarray(p, dtype=np.float64) + cam.translation
    z = p_cam[2]
    if z <= cam.near:
        return np.array([np.nan, np.nan]), float(z), False
    pixel = np.array([cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy])
    return pixel, float(z), True


def project_points(cam: CameraModel, points: np.ndarray):
    """Vectorized projection: (pixels (N,2), depths (N,), valid (N,))."""
    p_cam = cam.world_to_camera(points)
    z = p_cam[:, 2]
    valid = z > cam.near
    zsafe = np.where(valid, z, 1.0)
    pix = np.empty((len(z), 2))
    pix[:, 0] = cam.fx * p_cam[:, 0] / zsafe + cam.cx
    pix[:, 1] = cam.fy * p_cam[:, 1] / zsafe + cam.cy
    pix[~valid] = np.nan
    return pix, z, valid


def projection_jacobian(cam: CameraModel, p_cam) -> np.ndarray:
    """2x3 Jacobian of the pixel coordinates w.r.t. the camera-space point."""
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    assert z > cam.near, "projection_jacobian requires a point in front of the near plane"
    return np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ]
    )


def translate_camera(cam: CameraModel, d_cam: float) -> CameraModel:
    """Move the optical center by d_cam along the camera's local +x axis.

    Intrinsics and rotation are unchanged, so the result forms a rectified
    stereo pair with the input: corresponding pixels differ only horizontally.
    """
    if d_cam == 0.0:
        return cam
    translation = cam.translation - np.array([d_cam, 0.0, 0.0])
    return CameraModel(
        fx=cam.fx,
        fy=cam.fy,
        cx=cam.cx,
        cy=cam.cy,
        width=cam.width,
        height=cam.height,
        rotation=cam.rotation,
        translation=translation,
        near=cam.near,
    )


@dataclass(frozen=True)
class TriangulationResult:
    point: np.ndarray
    reproj_error: float
    valid: bool


def triangulate(
    cam_a: CameraModel,
    cam_b: CameraModel,
    match,
    max_reproj_px: float = 2.0,
) -> TriangulationResult:
    """Linear two-view triangulation of one correspondence (x_a, y_a, x_b, y_b).

    Solves the homogeneous DLT system from both projection matrices and
    dehomogenizes the smallest singular vector. The result is valid only if
    the point lies in front of both cameras and reprojects into both views
    within max_reproj_px pixels. Degenerate inputs yield valid=False.
    """
    x_a, y_a, x_b, y_b = (float(v) for v in np.asarray(match, dtype=np.float64)[:4])
    pa = cam_a.projection_matrix
    pb = cam_b.projection_matrix
    a = np.vstack(
        [
            x_a * pa[2] - pa[0],
            y_a * pa[2] - pa[1],
            x_b * pb[2] - pb[0],
            y_b * pb[2] - pb[1],
        ]
    )
    _, _, vt = np.linalg.svd(a)
    h = vt[-1]
    if abs(h[3]) < 1e-12 * max(1.0, np.abs(h[:3]).max()):
        return TriangulationResult(np.full(3, np.nan), float("inf"), False)
    point = h[:3] / h[3]

    pix_a, _, ok_a = project_point(cam_a, point)
    pix_b, _, ok_b = project_point(cam_b, point)
    if not (ok_a and ok_b):
        return TriangulationResult(point, float("inf"), False)
    err = max(
        float(np.hypot(pix_a[0] - x_a, pix_a[1] - y_a)),
        float(np.hypot(pix_b[0] - x_b, pix_b[1] - y_b)),
    )
    return TriangulationResult(point, err, err <= max_reproj_px)
