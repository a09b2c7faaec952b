"""First-order adaptive-moment optimizer over the cloud's parameter groups."""

from __future__ import annotations

import numpy as np

from .cloud import GaussianCloud
from .renderer import GradientBuffer

__all__ = ["AdamOptimizer", "exponential_lr"]

PARAM_GROUPS = ("positions", "rotations", "log_scales", "opacity_logits", "colors")
_GRAD_FIELDS = {
    "positions": "d_positions",
    "rotations": "d_rotations",
    "log_scales": "d_log_scales",
    "opacity_logits": "d_opacity_logits",
    "colors": "d_colors",
}


def exponential_lr(lr_init: float, lr_final: float, max_steps: int):
    """Log-linear interpolation from lr_init to lr_final over max_steps."""

    def schedule(step: int) -> float:
        if max_steps <= 0:
            return lr_final
        frac = min(max(step / max_steps, 0.0), 1.0)
        return float(np.exp((1.0 - frac) * np.log(lr_init) + frac * np.log(lr_final)))

    return schedule


class AdamOptimizer:
    """Adam with one moment pair per parameter group, sized to the cloud.

    Learning rates are supplied per group at each step so schedules stay with
    the caller. ``remap`` carries moments across densification events: rows
    originating from surviving Gaussians keep their state, fresh rows start
    at zero.
    """

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._shapes = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "colors": (n, 3),
        }
        self.m = {k: np.zeros(shape) for k, shape in self._shapes.items()}
        self.v = {k: np.zeros(shape) for k, shape in self._shapes.items()}

    def step(self, cloud: GaussianCloud, grads: GradientBuffer, lrs: dict[str, float]) -> None:
        if len(cloud) != len(grads.d_opacity_logits):
            raise ValueError("cloud and gradient buffer sizes differ")
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for group in PARAM_GROUPS:
            lr = lrs[group]
            if lr == 0.0:
                continue
            grad = getattr(grads, _GRAD_FIELDS[group])
            m = self.m[group]
            v = self.v[group]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad * grad)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            getattr(cloud, group)[:] -= lr * update

    def remap(self, origin: np.ndarray) -> None:
        """Re-index moments after densification; origin < 0 marks fresh rows."""
        origin = np.asarray(origin, dtype=np.int64)
        fresh = origin < 0
        src = np.where(fresh, 0, origin)
        n = len(origin)
        for group, shape in self._shapes.items():
            new_shape = (n,) + shape[1:]
            for store in (self.m, self.v):
                old = store[group]
                if old.shape[0] == 0:
                    new = np.zeros(new_shape)
                else:
                    new = old[src].reshape(new_shape).copy()
                    new[fresh] = 0.0
                store[group] = new
        self._shapes = {k: (n,) + s[1:] for k, s in self._shapes.items()}
