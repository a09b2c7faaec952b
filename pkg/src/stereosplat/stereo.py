"""Binocular consistency: disparity from rendered depth, horizontal warping,
and the self-supervised stereo loss with gradients.

A camera translated by d_cam along its local +x axis sees a static point
shifted horizontally by f * d_cam / depth pixels. Warping the translated
view's rendering back through that disparity must reproduce the original
view; the mean absolute mismatch is the consistency loss, differentiable in
both the warped image and the depth that produced the disparity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel
from .validation import as_image, as_map, check_same_shape

__all__ = [
    "DisparityMap",
    "ConsistencyResult",
    "compute_disparity",
    "warp_right_to_left",
    "consistency_loss",
    "sample_shift",
]

DEPTH_FLOOR = 1e-6


@dataclass
class DisparityMap:
    """Signed horizontal pixel offsets plus the mask of usable pixels."""

    values: np.ndarray
    valid_mask: np.ndarray


def compute_disparity(
    depth_left: np.ndarray,
    f: float,
    d_cam: float,
    alpha_left: np.ndarray,
    alpha_min: float = 0.5,
) -> DisparityMap:
    """Disparity f * d_cam / depth, masked where coverage or depth is unusable."""
    if f <= 0:
        raise ValueError("focal length must be positive")
    depth_left = as_map(depth_left, "depth_left")
    alpha_left = as_map(alpha_left, "alpha_left")
    check_same_shape(depth_left, alpha_left, "depth and alpha maps")
    values = f * d_cam / np.maximum(depth_left, DEPTH_FLOOR)
    mask = (alpha_left >= alpha_min) & (depth_left > DEPTH_FLOOR)
    return DisparityMap(values=values, valid_mask=mask)


def warp_right_to_left(i_right: np.ndarray, disparity: DisparityMap):
    """Sample the right image at column - disparity with bilinear weights.

    Returns (i_shifted, sample_mask). Out-of-range samples are masked out
    rather than clamped, so border pixels never bias the loss. The warp is
    differentiable in both the right image and the disparity.
    """
    i_right = as_image(i_right, "i_right")
    values = as_map(disparity.values, "disparity")
    h, w = values.shape
    if i_right.shape[:2] != (h, w):
        raise ValueError(
            f"image {i_right.shape[:2]} and disparity {values.shape} sizes differ"
        )
    cols = np.arange(w)[None, :]
    sample_x = cols - values
    in_range = (sample_x >= 0.0) & (sample_x <= w - 1.0)
    sample_mask = disparity.valid_mask & in_range

    xs = np.clip(sample_x, 0.0, w - 1.0)
    x0 = np.minimum(np.floor(xs), w - 2).astype(np.int64)
    frac = xs - x0
    rows = np.arange(h)[:, None]
    left = i_right[rows, x0]
    right = i_right[rows, x0 + 1]
    i_shifted = (1.0 - frac)[..., None] * left + frac[..., None] * right
    i_shifted[~sample_mask] = 0.0
    return i_shifted, sample_mask


@dataclass
class ConsistencyResult:
    value: float
    d_i_right: np.ndarray
    d_depth_left: np.ndarray
    sample_mask: np.ndarray
    disparity: DisparityMap


def consistency_loss(
    i_left_gt: np.ndarray,
    i_right_rendered: np.ndarray,
    depth_left_rendered: np.ndarray,
    alpha_left: np.ndarray,
    cam: CameraModel,
    d_cam: float,
    alpha_min: float = 0.5,
    grad_image: bool = True,
    grad_depth: bool = True,
) -> ConsistencyResult:
    """Mean absolute difference between the left view and the disparity-warped
    right rendering, over masked pixels only.

    Adjoints chain through the bilinear sampler into the rendered right image
    and through the disparity formula into the rendered left depth. Either
    gradient path can be switched off. An empty mask yields a zero loss and
    zero adjoints.
    """
    i_left_gt = as_image(i_left_gt, "i_left_gt")
    i_right_rendered = as_image(i_right_rendered, "i_right_rendered")
    check_same_shape(i_left_gt, i_right_rendered, "stereo pair")
    depth_left_rendered = as_map(depth_left_rendered, "depth_left_rendered")

    disparity = compute_disparity(
        depth_left_rendered, cam.fx, d_cam, alpha_left, alpha_min
    )
    i_shifted, mask = warp_right_to_left(i_right_rendered, disparity)

    d_i_right = np.zeros_like(i_right_rendered)
    d_depth = np.zeros_like(depth_left_rendered)
    n = 3 * int(np.count_nonzero(mask))
    if n == 0:
        return ConsistencyResult(0.0, d_i_right, d_depth, mask, disparity)

    residual = np.where(mask[..., None], i_left_gt - i_shifted, 0.0)
    value = float(np.abs(residual).sum() / n)
    d_shifted = -np.sign(residual) / n  # zero off-mask by construction

    h, w = depth_left_rendered.shape
    cols = np.arange(w)[None, :]
    xs = np.clip(cols - disparity.values, 0.0, w - 1.0)
    x0 = np.minimum(np.floor(xs), w - 2).astype(np.int64)
    frac = xs - x0
    rows = np.arange(h)[:, None]

    if grad_image:
        flat = d_i_right.reshape(-1, 3)
        base = rows * w
        np.add.at(flat, (base + x0).ravel(), ((1.0 - frac)[..., None] * d_shifted).reshape(-1, 3))
        np.add.at(flat, (base + x0 + 1).ravel(), (frac[..., None] * d_shifted).reshape(-1, 3))

    if grad_depth:
        slope = i_right_rendered[rows, x0 + 1] - i_right_rendered[rows, x0]
        d_xs = np.sum(d_shifted * slope, axis=2)
        d_disp = -d_xs  # sample position is column minus disparity
        depth_eff = np.maximum(depth_left_rendered, DEPTH_FLOOR)
        d_depth = np.where(
            mask, -d_disp * cam.fx * d_cam / (depth_eff * depth_eff), 0.0
        )
    return ConsistencyResult(value, d_i_right, d_depth, mask, disparity)


def sample_shift(rng: np.random.Generator, d_max: float) -> float:
    """Uniform signed camera shift in [-d_max, d_max] from the run's generator."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    return float(rng.uniform(-d_max, d_max))
