"""Adaptive density control: opacity decay, densification stats, clone/split,
and opacity-only pruning.

Opacity never gets the periodic reset used by stock 3DGS pipelines, and
pruning ignores world-space scale: the multiplicative opacity decay is the
sole mechanism that starves under-constrained Gaussians until the opacity
prune threshold removes them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import GaussianCloud, logit, quats_to_rotations, sigmoid

__all__ = [
    "DensifyConfig",
    "DensifyStats",
    "DensifyReport",
    "opacity_decay",
    "accumulate_densify_stats",
    "densify_and_prune",
]

OPACITY_FLOOR = 1e-6


def opacity_decay(cloud: GaussianCloud, decay: float) -> None:
    """Multiply every activated opacity by ``decay`` in place.

    The write-back goes through the inverse sigmoid with the activated value
    floored at 1e-6 so logits stay finite. decay = 1 leaves the cloud
    bit-identical.
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay coefficient must lie in (0, 1], got {decay}")
    if decay == 1.0 or len(cloud) == 0:
        return
    alpha = np.maximum(decay * sigmoid(cloud.opacity_logits), OPACITY_FLOOR)
    cloud.opacity_logits[:] = logit(alpha)


@dataclass
class DensifyStats:
    """Accumulated image-plane positional gradient norms and view counts."""

    grad_accum: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(grad_accum=np.zeros(n), counts=np.zeros(n, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.grad_accum)

    def reset(self, n: int) -> None:
        self.grad_accum = np.zeros(n)
        self.counts = np.zeros(n, dtype=np.int64)


def accumulate_densify_stats(
    stats: DensifyStats, means2d_grad: np.ndarray, visible: np.ndarray
) -> None:
    """Add the L2 norm of each visible Gaussian's image-plane position gradient."""
    means2d_grad = np.asarray(means2d_grad, dtype=np.float64).reshape(-1, 2)
    visible = np.asarray(visible, dtype=bool).reshape(-1)
    if len(means2d_grad) != len(stats) or len(visible) != len(stats):
        raise ValueError(
            f"gradient arrays of length {len(means2d_grad)}/{len(visible)} do not "
            f"match {len(stats)} tracked Gaussians"
        )
    norms = np.linalg.norm(means2d_grad, axis=1)
    stats.grad_accum[visible] += norms[visible]
    stats.counts[visible] += 1


@dataclass(frozen=True)
class DensifyConfig:
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    split_factor: float = 1.6
    prune_opacity: float = 0.005


@dataclass
class DensifyReport:
    cloned: int
    split: int
    pruned: int
    n_after: int
    # For each surviving row, the index it came from in the input cloud, or -1
    # for freshly created rows; lets the optimizer carry its moments across.
    origin: np.ndarray


def _covariance_samples(cloud: GaussianCloud, index: np.ndarray, rng) -> np.ndarray:
    """One draw per selected Gaussian from its own covariance."""
    if len(index) == 0:
        return np.zeros((0, 3))
    rots = quats_to_rotations(cloud.rotations[index])
    scales = np.exp(cloud.log_scales[index])
    normals = rng.standard_normal((len(index), 3))
    return np.einsum("nij,nj->ni", rots, scales * normals)


def densify_and_prune(
    cloud: GaussianCloud,
    stats: DensifyStats,
    config: DensifyConfig,
    scene_extent: float,
    rng: np.random.Generator,
) -> tuple[GaussianCloud, DensifyReport]:
    """Clone small / split large high-gradient Gaussians, then prune by opacity.

    Returns the new cloud and a report. Clones are displaced by one sample
    from the parent covariance; splits produce two children with scales
    divided by the split factor and positions sampled from the parent, which
    is removed. Pruning removes exactly the Gaussians whose activated opacity
    fell below the threshold. Stats are reset to match the new cloud.
    """
    if len(stats) != len(cloud):
        raise ValueError("densify stats do not match the cloud size")
    n = len(cloud)
    mean_grad = stats.grad_accum / np.maximum(stats.counts, 1)
    hot = mean_grad >= config.grad_threshold
    max_scale = np.exp(cloud.log_scales).max(axis=1) if n else np.zeros(0)
    small = max_scale < config.percent_dense * scene_extent
    clone_mask = hot & small
    split_mask = hot & ~small

    clone_idx = np.flatnonzero(clone_mask)
    split_idx = np.flatnonzero(split_mask)

    parts = [cloud]
    origins = [np.arange(n)]

    if len(clone_idx):
        clones = cloud.select(clone_idx)
        clones.positions += _covariance_samples(cloud, clone_idx, rng)
        parts.append(clones)
        origins.append(np.full(len(clone_idx), -1))

    if len(split_idx):
        child_idx = np.repeat(split_idx, 2)
        children = cloud.select(child_idx)
        children.positions += _covariance_samples(cloud, child_idx, rng)
        children.log_scales -= np.log(config.split_factor)
        parts.append(children)
        origins.append(np.full(len(child_idx), -1))

    merged = GaussianCloud.concatenate(parts)
    origin = np.concatenate(origins)

    remove = merged.opacities < config.prune_opacity
    n_pruned = int(np.count_nonzero(remove))
    # Split parents are consumed by their children.
    remove[split_idx] = True

    keep = ~remove
    new_cloud = merged.select(keep)
    report = DensifyReport(
        cloned=len(clone_idx),
        split=len(split_idx),
        pruned=n_pruned,
        n_after=len(new_cloud),
        origin=origin[keep],
    )
    stats.reset(len(new_cloud))
    return new_cloud, report
