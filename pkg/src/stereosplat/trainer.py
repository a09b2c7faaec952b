"""Training loop: combined color + binocular consistency optimization with
opacity decay and densification schedules.

Per iteration: render one training view, take the color reconstruction loss;
once the consistency schedule kicks in, additionally render the view from a
randomly shifted camera, warp it back through the rendered depth, and add the
stereo consistency loss at unit weight. Gradients from both passes are summed
into a single adaptive-moment update, followed by the opacity decay and, at
the configured cadence, densification and pruning.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import GaussianCloud, save_ply
from .density import (
    DensifyConfig,
    DensifyStats,
    accumulate_densify_stats,
    densify_and_prune,
    opacity_decay,
)
from .initialization import init_dense, init_random, init_sparse
from .losses import color_loss, psnr, ssim
from .optim import AdamOptimizer, exponential_lr
from .renderer import RenderConfig, render, render_backward
from .sceneio import SceneBundle
from .stereo import consistency_loss, sample_shift
from .camera import translate_camera

__all__ = ["TrainConfig", "TrainLog", "TrainerState", "TrainingDiverged", "train", "train_step"]


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; carries the iteration and term name."""


@dataclass
class TrainConfig:
    total_iters: int = 3000
    consis_start_iter: int | None = None  # default: ceil(2/3 * total_iters)
    beta: float = 0.2
    opacity_decay: float = 0.995
    d_max: float = 0.4
    alpha_min: float = 0.5
    consis_weight: float = 1.0
    grad_to_image: bool = True
    grad_to_depth: bool = True

    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15

    densify_from_iter: int = 500
    densify_interval: int = 100
    densify_until_frac: float = 0.6
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    prune_opacity: float = 0.005
    split_factor: float = 1.6

    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    normalize_depth: bool = True
    scene_extent: float | None = None
    random_init_count: int = 5000
    random_init_aabb: tuple | None = None
    checkpoint_interval: int = 0
    eval_interval: int = 0

    def __post_init__(self):
        if not 0.0 < self.opacity_decay <= 1.0:
            raise ValueError("opacity_decay must lie in (0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.d_max <= 0:
            raise ValueError("d_max must be positive")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.consis_start_iter is not None and self.consis_start_iter > self.total_iters:
            # A start beyond the end simply disables the term; normalize so
            # logs stay comparable.
            self.consis_start_iter = self.total_iters + 1

    @property
    def consis_start(self) -> int:
        if self.consis_start_iter is not None:
            return self.consis_start_iter
        return math.ceil(2.0 * self.total_iters / 3.0)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        doc = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("background", "random_init_aabb"):
            if doc.get(key) is not None:
                doc[key] = tuple(
                    tuple(v) if isinstance(v, list) else v for v in doc[key]
                )
        return cls(**doc)

    def render_config(self) -> RenderConfig:
        return RenderConfig(normalize_depth=self.normalize_depth)


@dataclass
class TrainLog:
    """Append-only record stream: one 'step' entry per iteration, plus
    'densify' and 'eval' events, in execution order."""

    entries: list = field(default_factory=list)

    def append(self, entry: dict) -> None:
        self.entries.append(entry)

    def steps(self) -> list:
        return [e for e in self.entries if e["type"] == "step"]

    def events(self, kind: str) -> list:
        return [e for e in self.entries if e["type"] == kind]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.entries) + (
            "\n" if self.entries else ""
        )


def scene_extent_from_positions(positions: np.ndarray) -> float:
    """Radius of the bounding sphere (centroid-based) of the initial points."""
    if len(positions) == 0:
        return 1.0
    center = positions.mean(axis=0)
    radius = float(np.linalg.norm(positions - center, axis=1).max())
    return max(radius, 1e-3)


def default_random_aabb(bundle: SceneBundle) -> np.ndarray:
    """Box spanned by the camera frusta between depths 1 and 4."""
    corners = []
    for cam in bundle.cameras.values():
        rot_t = cam.rotation.T
        center = cam.center
        for depth in (1.0, 4.0):
            for px, py in ((0, 0), (cam.width - 1, 0), (0, cam.height - 1), (cam.width - 1, cam.height - 1), ((cam.width - 1) / 2, (cam.height - 1) / 2)):
                ray = np.array([(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0])
                corners.append(center + rot_t @ (ray * depth))
    corners = np.asarray(corners)
    return np.vstack([corners.min(axis=0), corners.max(axis=0)])


def build_init_cloud(bundle: SceneBundle, config: TrainConfig, mode: str = "auto") -> GaussianCloud:
    """Initialization dispatch: dense correspondences, sparse PLY, or random."""
    rng = np.random.default_rng(config.seed + 7919)
    if mode == "auto":
        if bundle.correspondence_path is not None:
            mode = "dense"
        elif bundle.init_ply_path is not None:
            mode = "sparse"
        else:
            mode = "random"
    if mode == "dense":
        if bundle.correspondence_path is None:
            raise ValueError("scene has no correspondence file for dense initialization")
        images = {vid: bundle.image(vid) for vid in bundle.image_paths}
        return init_dense(bundle.cameras, images, bundle.correspondences())
    if mode == "sparse":
        if bundle.init_ply_path is None:
            raise ValueError("scene has no init point cloud for sparse initialization")
        return init_sparse(bundle.init_ply_path)
    if mode == "random":
        aabb = config.random_init_aabb
        if aabb is None:
            aabb = default_random_aabb(bundle)
        return init_random(config.random_init_count, np.asarray(aabb, dtype=np.float64).reshape(2, 3), rng)
    raise ValueError(f"unknown initialization mode {mode!r}")


@dataclass
class TrainerState:
    config: TrainConfig
    scene: SceneBundle
    cloud: GaussianCloud
    optimizer: AdamOptimizer
    stats: DensifyStats
    rng: np.random.Generator
    log: TrainLog
    scene_extent: float
    render_config: RenderConfig
    position_lr: object
    _view_queue: list = field(default_factory=list)

    def next_view(self) -> str:
        # Uniform without replacement per epoch.
        if not self._view_queue:
            order = self.rng.permutation(len(self.scene.train_ids))
            self._view_queue = [self.scene.train_ids[i] for i in order]
        return self._view_queue.pop(0)


def make_trainer_state(
    scene: SceneBundle, config: TrainConfig, init_cloud: GaussianCloud
) -> TrainerState:
    if not scene.train_ids:
        raise ValueError("scene has no training views")
    extent = (
        config.scene_extent
        if config.scene_extent is not None
        else scene_extent_from_positions(init_cloud.positions)
    )
    return TrainerState(
        config=config,
        scene=scene,
        cloud=init_cloud.clone(),
        optimizer=AdamOptimizer(
            len(init_cloud), config.adam_beta1, config.adam_beta2, config.adam_eps
        ),
        stats=DensifyStats.zeros(len(init_cloud)),
        rng=np.random.default_rng(config.seed),
        log=TrainLog(),
        scene_extent=extent,
        render_config=config.render_config(),
        position_lr=exponential_lr(
            config.lr_position * extent, config.lr_position_final * extent, config.total_iters
        ),
    )


def _check_finite(value: float, term: str, iteration: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"{term} became {value} at iteration {iteration}")


def train_step(state: TrainerState, iteration: int) -> dict:
    """One optimization step of the combined objective. Iterations are 1-based."""
    cfg = state.config
    view_id = state.next_view()
    cam = state.scene.cameras[view_id]
    target = state.scene.image(view_id)

    fb, render_state = render(state.cloud, cam, cfg.background, state.render_config)
    closs = color_loss(fb.color, target, cfg.beta)
    _check_finite(closs.value, "color loss", iteration)

    shift = None
    consis_value = None
    total = closs.value
    d_depth = None
    grads_right = None
    if iteration >= cfg.consis_start:
        shift = sample_shift(state.rng, cfg.d_max)
        cam_right = translate_camera(cam, shift)
        fb_right, render_state_right = render(
            state.cloud, cam_right, cfg.background, state.render_config
        )
        result = consistency_loss(
            target,
            fb_right.color,
            fb.depth,
            fb.alpha,
            cam,
            shift,
            alpha_min=cfg.alpha_min,
            grad_image=cfg.grad_to_image,
            grad_depth=cfg.grad_to_depth,
        )
        _check_finite(result.value, "consistency loss", iteration)
        consis_value = result.value
        total = closs.value + cfg.consis_weight * result.value
        if cfg.grad_to_depth:
            d_depth = cfg.consis_weight * result.d_depth_left
        if cfg.grad_to_image:
            grads_right = render_backward(
                render_state_right, d_color=cfg.consis_weight * result.d_i_right
            )

    grads = render_backward(render_state, d_color=closs.d_image, d_depth=d_depth)
    if grads_right is not None:
        grads.add(grads_right)

    lrs = {
        "positions": state.position_lr(iteration),
        "rotations": cfg.lr_rotation,
        "log_scales": cfg.lr_scale,
        "opacity_logits": cfg.lr_opacity,
        "colors": cfg.lr_color,
    }
    state.optimizer.step(state.cloud, grads, lrs)
    opacity_decay(state.cloud, cfg.opacity_decay)
    accumulate_densify_stats(state.stats, grads.d_means2d, grads.visible)

    record = {
        "type": "step",
        "iter": iteration,
        "view": view_id,
        "l_color": closs.value,
        "l_consis": consis_value,
        "total": total,
        "n_gaussians": len(state.cloud),
        "shift": shift,
    }
    state.log.append(record)

    in_densify_window = (
        cfg.densify_interval > 0
        and iteration >= cfg.densify_from_iter
        and iteration <= cfg.densify_until_frac * cfg.total_iters
        and iteration % cfg.densify_interval == 0
    )
    if in_densify_window:
        dcfg = DensifyConfig(
            grad_threshold=cfg.densify_grad_threshold,
            percent_dense=cfg.percent_dense,
            split_factor=cfg.split_factor,
            prune_opacity=cfg.prune_opacity,
        )
        state.cloud, report = densify_and_prune(
            state.cloud, state.stats, dcfg, state.scene_extent, state.rng
        )
        state.optimizer.remap(report.origin)
        state.log.append(
            {
                "type": "densify",
                "iter": iteration,
                "cloned": report.cloned,
                "split": report.split,
                "pruned": report.pruned,
                "n_after": report.n_after,
            }
        )
    return record


def evaluate(state: TrainerState, view_ids=None) -> dict:
    """PSNR/SSIM over the given views (default: the test split)."""
    cfg = state.config
    ids = list(view_ids) if view_ids is not None else state.scene.test_ids
    per_view = {}
    for vid in ids:
        fb, _ = render(state.cloud, state.scene.cameras[vid], cfg.background, state.render_config)
        target = state.scene.image(vid)
        per_view[vid] = {
            "psnr": psnr(fb.color, target),
            "ssim": ssim(fb.color, target),
        }
    mean_psnr = float(np.mean([m["psnr"] for m in per_view.values()])) if per_view else float("nan")
    mean_ssim = float(np.mean([m["ssim"] for m in per_view.values()])) if per_view else float("nan")
    return {"views": per_view, "mean_psnr": mean_psnr, "mean_ssim": mean_ssim}


def train(
    scene: SceneBundle,
    config: TrainConfig,
    init_cloud: GaussianCloud | None = None,
    init_mode: str = "auto",
    out_dir=None,
) -> tuple[GaussianCloud, TrainLog]:
    """Run the full schedule and return the final cloud and log.

    When out_dir is given, checkpoints (PLY + config snapshot) are written at
    the configured interval and at the end.
    """
    if init_cloud is None:
        init_cloud = build_init_cloud(scene, config, init_mode)
    state = make_trainer_state(scene, config, init_cloud)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.json").write_text(config.to_json())

    for iteration in range(1, config.total_iters + 1):
        train_step(state, iteration)
        if (
            out_path is not None
            and config.checkpoint_interval > 0
            and iteration % config.checkpoint_interval == 0
            and iteration < config.total_iters
        ):
            (out_path / f"cloud_{iteration:06d}.ply").write_bytes(save_ply(state.cloud))
        if config.eval_interval > 0 and iteration % config.eval_interval == 0:
            metrics = evaluate(state)
            state.log.append(
                {
                    "type": "eval",
                    "iter": iteration,
                    "mean_psnr": metrics["mean_psnr"],
                    "mean_ssim": metrics["mean_ssim"],
                }
            )

    if out_path is not None:
        (out_path / "cloud_final.ply").write_bytes(save_ply(state.cloud))
        (out_path / "train_log.jsonl").write_text(state.log.to_jsonl())
    return state.cloud, state.log
