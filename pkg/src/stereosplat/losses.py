"""Photometric losses and metrics: L1, SSIM / D-SSIM, combined color loss, PSNR.

Every loss returns its value together with the analytic adjoint with respect
to the first (rendered) image, so the renderer backward pass can consume it
directly. SSIM uses the reference configuration: 11x11 Gaussian window with
sigma 1.5, C1 = 0.01^2 and C2 = 0.03^2 for unit dynamic range, channel
averaged, with reflective (symmetric) padding so adjoint and image shapes
match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .validation import as_image, check_same_shape

__all__ = ["LossValue", "l1_loss", "ssim", "dssim_loss", "color_loss", "psnr"]

_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2


@dataclass
class LossValue:
    value: float
    d_image: np.ndarray


def l1_loss(rendered, target) -> LossValue:
    """Mean absolute difference over all pixels and channels."""
    rendered = as_image(rendered, "rendered")
    target = as_image(target, "target")
    check_same_shape(rendered, target, "loss images")
    diff = rendered - target
    return LossValue(float(np.mean(np.abs(diff))), np.sign(diff) / diff.size)


def _gaussian_window() -> np.ndarray:
    half = (_WINDOW_SIZE - 1) / 2.0
    x = np.arange(_WINDOW_SIZE) - half
    g = np.exp(-(x * x) / (2.0 * _WINDOW_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = _gaussian_window()
_PAD = _WINDOW_SIZE // 2
_pad_index_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _pad_indices(h: int, w: int):
    key = (h, w)
    if key not in _pad_index_cache:
        iy = np.pad(np.arange(h), _PAD, mode="symmetric")
        ix = np.pad(np.arange(w), _PAD, mode="symmetric")
        _pad_index_cache[key] = (iy, ix)
    return _pad_index_cache[key]


def _pad(x: np.ndarray) -> np.ndarray:
    iy, ix = _pad_indices(*x.shape)
    return x[np.ix_(iy, ix)]


def _fold_pad_adjoint(g_padded: np.ndarray, h: int, w: int) -> np.ndarray:
    # Adjoint of symmetric padding: every padded cell folds back onto the
    # interior pixel it mirrors.
    iy, ix = _pad_indices(h, w)
    flat = (iy[:, None] * w + ix[None, :]).ravel()
    out = np.zeros(h * w)
    np.add.at(out, flat, g_padded.ravel())
    return out.reshape(h, w)


def _valid_corr(padded: np.ndarray) -> np.ndarray:
    full = ndimage.correlate(padded, _WINDOW, mode="constant")
    return full[_PAD:-_PAD, _PAD:-_PAD]


def _valid_corr_adjoint(g: np.ndarray) -> np.ndarray:
    # Adjoint of crop-after-correlate: embed the adjoint in the padded frame
    # and correlate with the (symmetric) window under a zero boundary.
    emb = np.zeros((g.shape[0] + 2 * _PAD, g.shape[1] + 2 * _PAD))
    emb[_PAD:-_PAD, _PAD:-_PAD] = g
    return ndimage.correlate(emb, _WINDOW, mode="constant")


def _ssim_channel(x: np.ndarray, y: np.ndarray, grad_scale: float):
    """Mean SSIM of one channel plus d(mean SSIM)/dx scaled by grad_scale."""
    h, w = x.shape
    px, py = _pad(x), _pad(y)
    mu1 = _valid_corr(px)
    mu2 = _valid_corr(py)
    s1 = _valid_corr(px * px)
    s2 = _valid_corr(py * py)
    s12 = _valid_corr(px * py)
    var1 = s1 - mu1 * mu1
    var2 = s2 - mu2 * mu2
    cov = s12 - mu1 * mu2

    a = 2.0 * mu1 * mu2 + _C1
    b = 2.0 * cov + _C2
    c = mu1 * mu1 + mu2 * mu2 + _C1
    d = var1 + var2 + _C2
    ssim_map = (a * b) / (c * d)
    value = float(ssim_map.mean())

    gm = grad_scale / (h * w)
    cd = c * d
    ga = gm * b / cd
    gb = gm * a / cd
    gc = -gm * a * b / (c * cd)
    gd = -gm * a * b / (cd * d)
    # b and d reach x through cov and var1; a and c through mu1.
    g_mu1 = 2.0 * mu2 * ga + 2.0 * mu1 * gc - 2.0 * mu1 * gd - mu2 * (2.0 * gb)
    g_s1 = gd
    g_s12 = 2.0 * gb

    dx = _fold_pad_adjoint(_valid_corr_adjoint(g_mu1), h, w)
    dx += 2.0 * x * _fold_pad_adjoint(_valid_corr_adjoint(g_s1), h, w)
    dx += y * _fold_pad_adjoint(_valid_corr_adjoint(g_s12), h, w)
    return value, dx


def _mean_ssim_with_grad(rendered: np.ndarray, target: np.ndarray):
    values = []
    grad = np.empty_like(rendered)
    for ch in range(3):
        val, g = _ssim_channel(rendered[:, :, ch], target[:, :, ch], 1.0 / 3.0)
        values.append(val)
        grad[:, :, ch] = g
    return float(np.mean(values)), grad


def ssim(rendered, target) -> float:
    """Channel-averaged mean SSIM; 1.0 means identical images."""
    rendered = as_image(rendered, "rendered")
    target = as_image(target, "target")
    check_same_shape(rendered, target, "SSIM images")
    value, _ = _mean_ssim_with_grad(rendered, target)
    return value


def dssim_loss(rendered, target) -> LossValue:
    """Structural dissimilarity (1 - SSIM) / 2 with its image adjoint."""
    rendered = as_image(rendered, "rendered")
    target = as_image(target, "target")
    check_same_shape(rendered, target, "SSIM images")
    value, grad = _mean_ssim_with_grad(rendered, target)
    return LossValue((1.0 - value) / 2.0, -0.5 * grad)


def color_loss(rendered, target, beta: float = 0.2) -> LossValue:
    """(1 - beta) * L1 + beta * D-SSIM with the combined adjoint."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    l1 = l1_loss(rendered, target)
    if beta == 0.0:
        return l1
    ds = dssim_loss(rendered, target)
    if beta == 1.0:
        return ds
    return LossValue(
        (1.0 - beta) * l1.value + beta * ds.value,
        (1.0 - beta) * l1.d_image + beta * ds.d_image,
    )


def psnr(rendered, target) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; inf when equal."""
    rendered = as_image(rendered, "rendered")
    target = as_image(target, "target")
    check_same_shape(rendered, target, "PSNR images")
    mse = float(np.mean((rendered - target) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
