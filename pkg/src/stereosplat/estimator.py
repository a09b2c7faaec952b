"""Scikit-learn style estimator facade over the training pipeline.

The reconstructor is fit-shaped: ``fit`` consumes a scene (directory or
loaded bundle) and optimizes a Gaussian cloud; ``predict`` renders images for
cameras or view ids; ``score`` reports mean held-out PSNR. Hyperparameters
are plain constructor arguments so get_params/set_params and grid tooling
work out of the box.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .camera import CameraModel
from .losses import psnr
from .renderer import render
from .sceneio import SceneBundle, load_scene
from .trainer import TrainConfig, build_init_cloud, train

__all__ = ["GaussianSplattingReconstructor"]


class GaussianSplattingReconstructor(BaseEstimator):
    """Sparse-view scene reconstructor based on stereo-consistent splatting.

    Parameters mirror the training configuration; see TrainConfig for the
    full set of defaults this forwards to.
    """

    def __init__(
        self,
        total_iters: int = 3000,
        consis_start_iter: int | None = None,
        beta: float = 0.2,
        opacity_decay: float = 0.995,
        d_max: float = 0.4,
        alpha_min: float = 0.5,
        init_mode: str = "auto",
        seed: int = 0,
        background: tuple = (0.0, 0.0, 0.0),
        densify_grad_threshold: float = 2e-4,
        random_init_count: int = 5000,
    ):
        self.total_iters = total_iters
        self.consis_start_iter = consis_start_iter
        self.beta = beta
        self.opacity_decay = opacity_decay
        self.d_max = d_max
        self.alpha_min = alpha_min
        self.init_mode = init_mode
        self.seed = seed
        self.background = background
        self.densify_grad_threshold = densify_grad_threshold
        self.random_init_count = random_init_count

    def _config(self) -> TrainConfig:
        return TrainConfig(
            total_iters=self.total_iters,
            consis_start_iter=self.consis_start_iter,
            beta=self.beta,
            opacity_decay=self.opacity_decay,
            d_max=self.d_max,
            alpha_min=self.alpha_min,
            seed=self.seed,
            background=tuple(self.background),
            densify_grad_threshold=self.densify_grad_threshold,
            random_init_count=self.random_init_count,
        )

    @staticmethod
    def _as_bundle(scene) -> SceneBundle:
        if isinstance(scene, SceneBundle):
            return scene
        return load_scene(Path(scene))

    def fit(self, scene, y=None):
        """Optimize a Gaussian cloud for the scene's training views."""
        bundle = self._as_bundle(scene)
        config = self._config()
        init = build_init_cloud(bundle, config, self.init_mode)
        cloud, log = train(bundle, config, init_cloud=init)
        self.scene_ = bundle
        self.config_ = config
        self.cloud_ = cloud
        self.log_ = log
        return self

    def _require_fitted(self):
        if not hasattr(self, "cloud_"):
            raise NotFittedError("call fit before predict/score")

    def predict(self, X) -> np.ndarray:
        """Render (H, W, 3) images for cameras, view ids, or a mixed list."""
        self._require_fitted()
        if isinstance(X, (str, CameraModel)):
            X = [X]
        images = []
        for item in X:
            cam = self.scene_.cameras[item] if isinstance(item, str) else item
            fb, _ = render(self.cloud_, cam, self.config_.background)
            images.append(fb.color)
        return np.stack(images)

    def score(self, X=None, y=None) -> float:
        """Mean PSNR over the given view ids (default: the scene's test split)."""
        self._require_fitted()
        ids = list(X) if X is not None else self.scene_.test_ids
        if not ids:
            raise ValueError("no views to score")
        values = []
        for vid in ids:
            fb, _ = render(self.cloud_, self.scene_.cameras[vid], self.config_.background)
            values.append(psnr(fb.color, self.scene_.image(vid)))
        return float(np.mean(values))
