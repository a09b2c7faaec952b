"""Small input-validation helpers shared by losses, warping, and the renderer."""

from __future__ import annotations

import numpy as np

__all__ = ["as_image", "as_map", "check_same_shape", "check_finite"]


def as_image(arr, name="image") -> np.ndarray:
    """Coerce to a float64 (H, W, 3) array."""
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 3 or out.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {out.shape}")
    return out


def as_map(arr, name="map") -> np.ndarray:
    """Coerce to a float64 (H, W) array."""
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {out.shape}")
    return out


def check_same_shape(a: np.ndarray, b: np.ndarray, what="arrays") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} must share a shape: {a.shape} vs {b.shape}")


def check_finite(arr: np.ndarray, name="array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
