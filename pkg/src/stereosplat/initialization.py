"""Initial Gaussian clouds: triangulated dense points, sparse point clouds,
or random points in a box.

All modes share the same defaulting rules: initial opacity 0.1, identity
rotation, and isotropic scales set from the mean distance to each point's
three nearest initialized neighbors.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraModel, CorrespondenceSet, triangulate
from .cloud import GaussianCloud, logit, rgb_to_feature
from .sceneio import read_point_ply

__all__ = [
    "InitializationError",
    "init_dense",
    "init_random",
    "init_sparse",
    "nearest_neighbor_log_scales",
]

INIT_OPACITY = 0.1
MIN_SCALE = 1e-6


class InitializationError(ValueError):
    """Raised when an initialization mode cannot produce any Gaussians."""


def nearest_neighbor_log_scales(positions: np.ndarray) -> np.ndarray:
    """Isotropic log-scales from the mean distance to the 3 nearest neighbors."""
    n = len(positions)
    if n == 1:
        dist = np.array([0.1])
    else:
        k = min(3, n - 1)
        tree = cKDTree(positions)
        dists, _ = tree.query(positions, k=k + 1)
        dist = dists[:, 1:].mean(axis=1)
    dist = np.maximum(dist, MIN_SCALE)
    return np.repeat(np.log(dist)[:, None], 3, axis=1)


def _assemble(positions: np.ndarray, rgb: np.ndarray) -> GaussianCloud:
    n = len(positions)
    return GaussianCloud(
        positions=positions,
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        log_scales=nearest_neighbor_log_scales(positions),
        opacity_logits=np.full(n, logit(INIT_OPACITY)),
        colors=rgb_to_feature(rgb),
    )


def _sample_bilinear(image: np.ndarray, x: float, y: float) -> np.ndarray:
    h, w = image.shape[:2]
    xs = min(max(x, 0.0), w - 1.0)
    ys = min(max(y, 0.0), h - 1.0)
    x0 = min(int(xs), w - 2) if w > 1 else 0
    y0 = min(int(ys), h - 2) if h > 1 else 0
    fx = xs - x0
    fy = ys - y0
    return (
        image[y0, x0] * (1 - fx) * (1 - fy)
        + image[y0, min(x0 + 1, w - 1)] * fx * (1 - fy)
        + image[min(y0 + 1, h - 1), x0] * (1 - fx) * fy
        + image[min(y0 + 1, h - 1), min(x0 + 1, w - 1)] * fx * fy
    )


def init_dense(
    cameras: dict[str, CameraModel],
    images: dict[str, np.ndarray],
    correspondence_sets: list[CorrespondenceSet],
    max_reproj_px: float = 2.0,
    min_confidence: float = 0.5,
) -> GaussianCloud:
    """Triangulate every gated match from every provided view pair.

    Matches below the confidence gate are skipped; triangulations failing the
    cheirality or reprojection gate are dropped. Point color is the mean of
    the two sampled pixel colors. Pairs are processed in sorted id order so
    the output is reproducible regardless of input ordering.
    """
    if len(cameras) < 2:
        raise InitializationError("dense initialization needs at least two cameras")
    points = []
    colors = []
    kept = 0
    for cset in sorted(correspondence_sets, key=lambda s: (s.view_a, s.view_b)):
        if cset.view_a not in cameras or cset.view_b not in cameras:
            raise InitializationError(
                f"correspondence pair ({cset.view_a}, {cset.view_b}) references an unknown view"
            )
        cam_a = cameras[cset.view_a]
        cam_b = cameras[cset.view_b]
        img_a = images.get(cset.view_a)
        img_b = images.get(cset.view_b)
        for row in cset.matches:
            if row[4] < min_confidence:
                continue
            result = triangulate(cam_a, cam_b, row[:4], max_reproj_px=max_reproj_px)
            if not result.valid:
                continue
            kept += 1
            points.append(result.point)
            if img_a is not None and img_b is not None:
                ca = _sample_bilinear(img_a, row[0], row[1])
                cb = _sample_bilinear(img_b, row[2], row[3])
                colors.append(0.5 * (ca + cb))
            else:
                colors.append(np.full(3, 0.5))
    if kept == 0:
        raise InitializationError(
            "no triangulated points survived the confidence/reprojection gates"
        )
    return _assemble(np.asarray(points), np.asarray(colors))


def init_random(count: int, aabb, rng: np.random.Generator) -> GaussianCloud:
    """Uniform random points in an axis-aligned box with colors spanning [0,1]."""
    if count < 1:
        raise ValueError("random initialization needs count >= 1")
    aabb = np.asarray(aabb, dtype=np.float64).reshape(2, 3)
    if not np.all(aabb[1] > aabb[0]):
        raise ValueError(f"degenerate bounding box: {aabb.tolist()}")
    positions = rng.uniform(aabb[0], aabb[1], size=(count, 3))
    rgb = rng.uniform(0.0, 1.0, size=(count, 3))
    return _assemble(positions, rgb)


def init_sparse(ply_path) -> GaussianCloud:
    """One Gaussian per point of a point-cloud PLY (x, y, z + optional rgb)."""
    positions, colors = read_point_ply(ply_path)
    if colors is None:
        colors = np.full((len(positions), 3), 0.5)
    return _assemble(positions, colors)
