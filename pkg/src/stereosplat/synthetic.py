"""Synthetic scenes and independent numerical oracles for verification.

Scene kinds isolate mechanisms:
  - textured-plane: a fronto-parallel sheet of small Gaussians with a smooth
    sinusoidal texture and constant analytic depth, so disparity warping can
    be checked against closed-form expectations.
  - two-layer: two textured sheets at different depths (occlusion), plus an
    emitted initialization point cloud that contains a planted off-surface
    floater band the opacity decay is expected to remove.
  - random-blob-cloud: unstructured Gaussians for stress-testing gradients.

Everything is seeded and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel, CorrespondenceSet, project_points
from .cloud import GaussianCloud, logit, rgb_to_feature
from .renderer import GradientBuffer, render
from .sceneio import SceneBundle, load_scene, write_scene

__all__ = [
    "SyntheticSceneSpec",
    "make_scene",
    "finite_diff_gradients",
    "fabricate_correspondences",
    "gradient_check_scene",
    "FLOATER_BAND",
]

# Depth band (z range) where the two-layer scene plants its floater points.
FLOATER_BAND = (0.9, 1.25)


@dataclass
class SyntheticSceneSpec:
    kind: str = "textured-plane"
    n_gaussians: int = 900
    n_cameras: int = 5
    ring_radius: float = 0.12
    look_at: tuple | None = None
    image_size: int = 48
    texture_frequency: float = 1.2
    seed: int = 0
    n_floaters: int = 120
    init_jitter: float = 0.12
    correspondence_noise_px: float = 0.2
    correspondence_outlier_rate: float = 0.05

    def __post_init__(self):
        if self.kind not in ("textured-plane", "two-layer", "random-blob-cloud"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")
        if self.n_cameras < 2:
            raise ValueError("need at least two cameras")


def _look_at_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, forward)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(up, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    # Rows of a world-to-camera rotation are the camera axes in world coords.
    return np.vstack([right, down, forward])


def _ring_cameras(spec: SyntheticSceneSpec) -> dict[str, CameraModel]:
    size = spec.image_size
    fx = size / 1.2
    cams = {}
    for i in range(spec.n_cameras):
        angle = 2.0 * np.pi * i / spec.n_cameras
        center = np.array(
            [spec.ring_radius * np.cos(angle), spec.ring_radius * np.sin(angle), 0.0]
        )
        if spec.look_at is None:
            rotation = np.eye(3)
        else:
            rotation = _look_at_rotation(center, np.asarray(spec.look_at, dtype=np.float64))
        translation = -rotation @ center
        cams[f"view{i}"] = CameraModel(
            fx=fx,
            fy=fx,
            cx=(size - 1) / 2.0,
            cy=(size - 1) / 2.0,
            width=size,
            height=size,
            rotation=rotation,
            translation=translation,
        )
    return cams


def _plane_texture(u: np.ndarray, v: np.ndarray, frequency: float, phases) -> np.ndarray:
    """Smooth per-channel color field over normalized plane coordinates."""
    rgb = np.empty((len(u), 3))
    for ch, (pu, pv) in enumerate(phases):
        rgb[:, ch] = (
            0.5
            + 0.21 * np.sin(2.0 * np.pi * frequency * u + pu)
            + 0.17 * np.sin(2.0 * np.pi * (frequency * 0.85) * v + pv)
        )
    return np.clip(rgb, 0.04, 0.96)


def _plane_sheet(
    z: float,
    x_range: tuple,
    y_range: tuple,
    n_points: int,
    frequency: float,
    phases,
    opacity: float,
) -> GaussianCloud:
    side = max(int(round(np.sqrt(n_points))), 2)
    xs = np.linspace(x_range[0], x_range[1], side)
    ys = np.linspace(y_range[0], y_range[1], side)
    gx, gy = np.meshgrid(xs, ys)
    positions = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    spacing = (x_range[1] - x_range[0]) / (side - 1)
    u = (positions[:, 0] - x_range[0]) / (x_range[1] - x_range[0])
    v = (positions[:, 1] - y_range[0]) / (y_range[1] - y_range[0])
    rgb = _plane_texture(u, v, frequency, phases)
    n = len(positions)
    return GaussianCloud(
        positions=positions,
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=np.full((n, 3), np.log(spacing * 0.62)),
        opacity_logits=np.full(n, logit(opacity)),
        colors=rgb_to_feature(rgb),
    )


def _gt_cloud(spec: SyntheticSceneSpec, rng: np.random.Generator) -> GaussianCloud:
    if spec.kind == "textured-plane":
        return _plane_sheet(
            z=2.0,
            x_range=(-1.45, 1.45),
            y_range=(-1.45, 1.45),
            n_points=spec.n_gaussians,
            frequency=spec.texture_frequency,
            phases=[(0.0, 1.1), (2.1, 3.9), (4.2, 0.7)],
            opacity=0.97,
        )
    if spec.kind == "two-layer":
        back = _plane_sheet(
            z=2.4,
            x_range=(-1.45, 1.45),
            y_range=(-1.45, 1.45),
            n_points=int(spec.n_gaussians * 0.72),
            frequency=spec.texture_frequency,
            phases=[(0.3, 1.6), (2.5, 4.4), (4.8, 0.2)],
            opacity=0.97,
        )
        front = _plane_sheet(
            z=1.6,
            x_range=(-0.75, 0.1),
            y_range=(-0.55, 0.45),
            n_points=spec.n_gaussians - len(back),
            frequency=spec.texture_frequency * 1.3,
            phases=[(1.2, 0.4), (3.3, 2.2), (5.1, 5.6)],
            opacity=0.97,
        )
        return GaussianCloud.concatenate([back, front])
    # random-blob-cloud
    n = spec.n_gaussians
    positions = rng.uniform([-0.7, -0.7, 1.4], [0.7, 0.7, 2.8], size=(n, 3))
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    log_scales = np.log(rng.uniform(0.05, 0.16, size=(n, 3)))
    opacity_logits = logit(rng.uniform(0.25, 0.9, size=n))
    rgb = rng.uniform(0.1, 0.9, size=(n, 3))
    return GaussianCloud(
        positions=positions,
        rotations=quats,
        log_scales=log_scales,
        opacity_logits=opacity_logits,
        colors=rgb_to_feature(rgb),
    )


def fabricate_correspondences(
    surface_points: np.ndarray,
    cam_a: CameraModel,
    cam_b: CameraModel,
    noise_px: float,
    outlier_rate: float,
    rng: np.random.Generator,
    view_a: str = "a",
    view_b: str = "b",
) -> CorrespondenceSet:
    """Exact projections of known surface points, plus pixel noise and a
    fraction of uniform outliers (confidence 0.1 vs 0.9 for inliers)."""
    pix_a, _, ok_a = project_points(cam_a, surface_points)
    pix_b, _, ok_b = project_points(cam_b, surface_points)
    inside_a = ok_a & (pix_a[:, 0] >= 0) & (pix_a[:, 0] <= cam_a.width - 1)
    inside_a &= (pix_a[:, 1] >= 0) & (pix_a[:, 1] <= cam_a.height - 1)
    inside_b = ok_b & (pix_b[:, 0] >= 0) & (pix_b[:, 0] <= cam_b.width - 1)
    inside_b &= (pix_b[:, 1] >= 0) & (pix_b[:, 1] <= cam_b.height - 1)
    keep = inside_a & inside_b
    pa = pix_a[keep]
    pb = pix_b[keep]
    n = len(pa)
    if noise_px > 0:
        pa = pa + rng.normal(0.0, noise_px, size=pa.shape)
        pb = pb + rng.normal(0.0, noise_px, size=pb.shape)
    conf = np.full(n, 0.9)
    if outlier_rate > 0 and n:
        outliers = rng.random(n) < outlier_rate
        pb = pb.copy()
        pb[outliers, 0] = rng.uniform(0, cam_b.width - 1, size=outliers.sum())
        pb[outliers, 1] = rng.uniform(0, cam_b.height - 1, size=outliers.sum())
        conf[outliers] = 0.1
    pa[:, 0] = np.clip(pa[:, 0], 0, cam_a.width - 1)
    pa[:, 1] = np.clip(pa[:, 1], 0, cam_a.height - 1)
    pb[:, 0] = np.clip(pb[:, 0], 0, cam_b.width - 1)
    pb[:, 1] = np.clip(pb[:, 1], 0, cam_b.height - 1)
    matches = np.column_stack([pa, pb, conf])
    return CorrespondenceSet(view_a=view_a, view_b=view_b, matches=matches)


@dataclass
class SyntheticScene:
    spec: SyntheticSceneSpec
    cloud: GaussianCloud
    bundle: SceneBundle
    images: dict = field(default_factory=dict)
    depths: dict = field(default_factory=dict)


def make_scene(spec: SyntheticSceneSpec, out_dir) -> SyntheticScene:
    """Build the ground-truth cloud, render every view, and write a scene dir."""
    rng = np.random.default_rng(spec.seed)
    cloud = _gt_cloud(spec, rng)
    cameras = _ring_cameras(spec)
    ids = sorted(cameras, key=lambda v: int(v.removeprefix("view")))
    train_ids = ids[0::2]
    test_ids = ids[1::2]

    images = {}
    depths = {}
    for vid in ids:
        fb, _ = render(cloud, cameras[vid])
        images[vid] = fb.color
        depths[vid] = fb.depth

    correspondence_sets = None
    init_points = None
    init_colors = None
    if spec.kind == "two-layer":
        # Training starts from surface samples with depth jitter plus a
        # floater band; only the consistency loss and decay can clean it up.
        surf_idx = rng.permutation(len(cloud))[: int(len(cloud) * 0.8)]
        surf_idx.sort()
        surface = cloud.positions[surf_idx].copy()
        surface_colors = cloud.rgb[surf_idx]
        surface[:, 2] += rng.uniform(-spec.init_jitter, spec.init_jitter, len(surface))
        lo, hi = FLOATER_BAND
        floaters = np.column_stack(
            [
                rng.uniform(-0.6, 0.6, spec.n_floaters),
                rng.uniform(-0.6, 0.6, spec.n_floaters),
                rng.uniform(lo, hi, spec.n_floaters),
            ]
        )
        floater_colors = rng.uniform(0.2, 0.8, size=(spec.n_floaters, 3))
        init_points = np.concatenate([surface, floaters])
        init_colors = np.concatenate([surface_colors, floater_colors])

        correspondence_sets = []
        gt_surface = cloud.positions
        for i in range(len(train_ids)):
            for j in range(i + 1, len(train_ids)):
                va, vb = train_ids[i], train_ids[j]
                correspondence_sets.append(
                    fabricate_correspondences(
                        gt_surface,
                        cameras[va],
                        cameras[vb],
                        spec.correspondence_noise_px,
                        spec.correspondence_outlier_rate,
                        rng,
                        view_a=va,
                        view_b=vb,
                    )
                )

    write_scene(
        out_dir,
        cameras,
        train_ids,
        test_ids,
        images,
        depths=depths,
        correspondence_sets=correspondence_sets,
        init_points=init_points,
        init_colors=init_colors,
    )
    bundle = load_scene(out_dir)
    return SyntheticScene(spec=spec, cloud=cloud, bundle=bundle, images=images, depths=depths)


def gradient_check_scene(
    seed: int, n_gaussians: int = 20, image_size: int = 16
) -> tuple[GaussianCloud, CameraModel]:
    """Random cloud/camera pair built to sit away from subgradient boundaries.

    The compositor's skip/clamp thresholds, the depth sort, the warp's
    bilinear interpolation breakpoints, and its border mask are exact
    non-differentiabilities, so finite differences are only meaningful when no
    probe straddles one. This generator keeps every splat's footprint wide
    and well inside the image (contribution stays above the skip threshold at
    every pixel), opacities far from the clamp, camera depths separated but
    confined to a band where stereo disparities stay away from integer sample
    positions, for any seed.
    """
    rng = np.random.default_rng(seed)
    size = image_size
    fx = 2.5 * size
    cam = CameraModel(
        fx=fx,
        fy=fx,
        cx=(size - 1) / 2.0,
        cy=(size - 1) / 2.0,
        width=size,
        height=size,
        rotation=np.eye(3),
        translation=np.zeros(3),
    )
    n = n_gaussians
    gap = 0.2 / n
    z = 1.9 + np.arange(n) * gap + rng.uniform(-0.3 * gap, 0.3 * gap, n)
    z = rng.permutation(z)
    u = rng.uniform(0.22 * size, 0.72 * size, n)
    v = rng.uniform(0.22 * size, 0.72 * size, n)
    positions = np.column_stack([(u - cam.cx) * z / fx, (v - cam.cy) * z / fx, z])
    sigma_px = rng.uniform(0.55 * size, 0.8 * size, (n, 3))
    log_scales = np.log(sigma_px * z[:, None] / fx)
    quats = rng.standard_normal((n, 4))
    # Bounded so 20 stacked splats cannot drive transmittance down to the
    # early-termination threshold (0.72^20 is still ~14x above it).
    opacity_logits = logit(rng.uniform(0.10, 0.28, n))
    rgb = rng.uniform(0.15, 0.85, (n, 3))
    cloud = GaussianCloud(
        positions=positions,
        rotations=quats,
        log_scales=log_scales,
        opacity_logits=opacity_logits,
        colors=rgb_to_feature(rgb),
    )
    return cloud, cam


def finite_diff_gradients(
    cloud: GaussianCloud,
    cam: CameraModel,
    loss_fn,
    step: float = 1e-4,
) -> GradientBuffer:
    """Central differences of loss_fn(cloud, cam) over every raw parameter.

    Intended for desk-scale checks (small clouds, small images); this is the
    independent oracle the analytic backward pass is judged against.
    """
    grads = GradientBuffer.zeros(len(cloud))
    targets = {
        "positions": grads.d_positions,
        "rotations": grads.d_rotations,
        "log_scales": grads.d_log_scales,
        "opacity_logits": grads.d_opacity_logits,
        "colors": grads.d_colors,
    }
    work = cloud.clone()
    for name, out in targets.items():
        arr = getattr(work, name)
        flat = arr.reshape(-1)
        out_flat = out.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            plus = loss_fn(work, cam)
            flat[i] = saved - step
            minus = loss_fn(work, cam)
            flat[i] = saved
            out_flat[i] = (plus - minus) / (2.0 * step)
    return grads
