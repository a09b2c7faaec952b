"""Differentiable forward splatting and the analytic backward pass.

The forward pass projects every Gaussian, builds its 2D covariance from the
projection Jacobian, sorts survivors by camera-space depth, and composites
front-to-back per pixel (color, alpha-normalized expected depth, accumulated
alpha). The backward pass returns exact reverse-mode gradients of those three
outputs with respect to every raw Gaussian parameter.

Culling never changes the image: discarded Gaussians are exactly those whose
contribution would fall below the alpha skip threshold at every pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import CameraModel
from .cloud import COV2D_DILATION, SH_C0, GaussianCloud, quats_to_rotations, sigmoid

__all__ = [
    "RenderConfig",
    "Framebuffer",
    "GradientBuffer",
    "RenderState",
    "render",
    "render_backward",
    "render_reference",
]

# Any pixel further than this many sigmas (along the widest axis) from a
# splat center fails the 1/255 alpha skip, so bounding boxes at this radius
# make tiled and brute-force compositing identical.
CUTOFF_SIGMA = 3.4


@dataclass(frozen=True)
class RenderConfig:
    alpha_clamp: float = 0.99
    alpha_skip: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    dilation: float = COV2D_DILATION
    tile_size: int = 16
    normalize_depth: bool = True
    depth_eps: float = 1e-8


DEFAULT_RENDER_CONFIG = RenderConfig()


@dataclass
class Framebuffer:
    color: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    background: np.ndarray


@dataclass
class GradientBuffer:
    """Gradients of a scalar loss with respect to the raw cloud parameters.

    d_means2d carries the per-Gaussian image-plane center gradient (pixels)
    and visible flags which Gaussians survived culling; both feed the
    densification statistics.
    """

    d_positions: np.ndarray
    d_rotations: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_colors: np.ndarray
    d_means2d: np.ndarray
    visible: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffer":
        return cls(
            d_positions=np.zeros((n, 3)),
            d_rotations=np.zeros((n, 4)),
            d_log_scales=np.zeros((n, 3)),
            d_opacity_logits=np.zeros(n),
            d_colors=np.zeros((n, 3)),
            d_means2d=np.zeros((n, 2)),
            visible=np.zeros(n, dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.d_opacity_logits)

    def add(self, other: "GradientBuffer") -> "GradientBuffer":
        if len(self) != len(other):
            raise ValueError("gradient buffers track different cloud sizes")
        self.d_positions += other.d_positions
        self.d_rotations += other.d_rotations
        self.d_log_scales += other.d_log_scales
        self.d_opacity_logits += other.d_opacity_logits
        self.d_colors += other.d_colors
        self.d_means2d += other.d_means2d
        self.visible |= other.visible
        return self


@dataclass
class RenderState:
    """Opaque intermediates tying a backward call to its forward render."""

    cloud_size: int
    cam: CameraModel
    config: RenderConfig
    framebuffer: Framebuffer
    vis_idx: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    conics: np.ndarray = field(repr=False)
    cov_abc: np.ndarray = field(repr=False)
    dets: np.ndarray = field(repr=False)
    zs: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    rgbs: np.ndarray = field(repr=False)
    rgb_active: np.ndarray = field(repr=False)
    p_cam: np.ndarray = field(repr=False)
    jac: np.ndarray = field(repr=False)
    uw: np.ndarray = field(repr=False)
    cov3d: np.ndarray = field(repr=False)
    rot_mats: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)
    unit_quats: np.ndarray = field(repr=False)
    quat_norms: np.ndarray = field(repr=False)
    tile_start: np.ndarray = field(repr=False)
    tile_items: np.ndarray = field(repr=False)
    bbox: tuple = field(repr=False)
    n_tiles_x: int = 0


def _project_geometry(cloud: GaussianCloud, cam: CameraModel, cfg: RenderConfig):
    """Per-Gaussian projection, 2D covariance, and visibility, vectorized."""
    n = len(cloud)
    rot_w2c = cam.rotation
    p_cam = cloud.positions @ rot_w2c.T + cam.translation
    z = p_cam[:, 2]
    in_front = z > cam.near
    zsafe = np.where(in_front, z, 1.0)

    centers = np.empty((n, 2))
    centers[:, 0] = cam.fx * p_cam[:, 0] / zsafe + cam.cx
    centers[:, 1] = cam.fy * p_cam[:, 1] / zsafe + cam.cy

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / zsafe
    jac[:, 1, 1] = cam.fy / zsafe
    jac[:, 0, 2] = -cam.fx * p_cam[:, 0] / (zsafe * zsafe)
    jac[:, 1, 2] = -cam.fy * p_cam[:, 1] / (zsafe * zsafe)

    unit_quats = cloud.rotations / np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    rot_mats = quats_to_rotations(cloud.rotations)
    variances = np.exp(2.0 * cloud.log_scales)
    cov3d = np.einsum("nij,nj,nkj->nik", rot_mats, variances, rot_mats)

    uw = jac @ rot_w2c
    cov2d = np.einsum("nij,njk,nlk->nil", uw, cov3d, uw)
    cov_abc = np.empty((n, 3))
    cov_abc[:, 0] = cov2d[:, 0, 0] + cfg.dilation
    cov_abc[:, 1] = cov2d[:, 0, 1]
    cov_abc[:, 2] = cov2d[:, 1, 1] + cfg.dilation
    dets = cov_abc[:, 0] * cov_abc[:, 2] - cov_abc[:, 1] ** 2
    conics = np.empty((n, 3))
    conics[:, 0] = cov_abc[:, 2] / dets
    conics[:, 1] = -cov_abc[:, 1] / dets
    conics[:, 2] = cov_abc[:, 0] / dets

    mid = 0.5 * (cov_abc[:, 0] + cov_abc[:, 2])
    lam_max = mid + np.sqrt(np.maximum((mid - cov_abc[:, 2]) ** 2 + cov_abc[:, 1] ** 2, 0.0))
    radius = CUTOFF_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    bx0 = np.ceil(centers[:, 0] - radius)
    bx1 = np.floor(centers[:, 0] + radius)
    by0 = np.ceil(centers[:, 1] - radius)
    by1 = np.floor(centers[:, 1] + radius)
    with np.errstate(invalid="ignore"):
        on_image = (
            (bx1 >= 0)
            & (bx0 <= cam.width - 1)
            & (by1 >= 0)
            & (by0 <= cam.height - 1)
        )
    visible = in_front & on_image & np.isfinite(radius)
    bx0 = np.clip(bx0, 0, cam.width - 1).astype(np.int64)
    bx1 = np.clip(bx1, 0, cam.width - 1).astype(np.int64)
    by0 = np.clip(by0, 0, cam.height - 1).astype(np.int64)
    by1 = np.clip(by1, 0, cam.height - 1).astype(np.int64)
    return (
        p_cam,
        z,
        centers,
        jac,
        unit_quats,
        rot_mats,
        variances,
        cov3d,
        uw,
        cov_abc,
        dets,
        conics,
        (bx0, bx1, by0, by1),
        visible,
    )


def render(
    cloud: GaussianCloud,
    cam: CameraModel,
    background=(0.0, 0.0, 0.0),
    config: RenderConfig = DEFAULT_RENDER_CONFIG,
) -> tuple[Framebuffer, RenderState]:
    """Render color, expected depth, and accumulated alpha for one camera."""
    background = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = cam.height, cam.width
    color = np.empty((h, w, 3))
    depth = np.zeros((h, w))
    alpha = np.zeros((h, w))

    (
        p_cam,
        z,
        centers,
        jac,
        unit_quats,
        rot_mats,
        variances,
        cov3d,
        uw,
        cov_abc,
        dets,
        conics,
        bbox,
        visible,
    ) = _project_geometry(cloud, cam, config)

    vis_idx = np.flatnonzero(visible)
    order = np.argsort(z[vis_idx], kind="stable")
    vis_idx = vis_idx[order]

    alphas = sigmoid(cloud.opacity_logits[vis_idx])
    rgbs_full = SH_C0 * cloud.colors + 0.5
    rgb_active = rgbs_full > 0.0
    rgbs = np.maximum(rgbs_full[vis_idx], 0.0)

    n_tiles_x = (w + config.tile_size - 1) // config.tile_size
    n_tiles_y = (h + config.tile_size - 1) // config.tile_size
    bx0, bx1, by0, by1 = (b[vis_idx] for b in bbox)
    tile_start, tile_items = _kernels.build_tile_lists(
        bx0, bx1, by0, by1, config.tile_size, n_tiles_x, n_tiles_y
    )

    _kernels.composite_forward(
        np.ascontiguousarray(centers[vis_idx]),
        np.ascontiguousarray(conics[vis_idx]),
        alphas,
        np.ascontiguousarray(rgbs),
        np.ascontiguousarray(z[vis_idx]),
        bx0,
        bx1,
        by0,
        by1,
        tile_start,
        tile_items,
        config.tile_size,
        n_tiles_x,
        background,
        config.alpha_clamp,
        config.alpha_skip,
        config.transmittance_min,
        config.normalize_depth,
        config.depth_eps,
        color,
        depth,
        alpha,
    )

    fb = Framebuffer(color=color, depth=depth, alpha=alpha, background=background)
    state = RenderState(
        cloud_size=len(cloud),
        cam=cam,
        config=config,
        framebuffer=fb,
        vis_idx=vis_idx,
        centers=np.ascontiguousarray(centers[vis_idx]),
        conics=np.ascontiguousarray(conics[vis_idx]),
        cov_abc=np.ascontiguousarray(cov_abc[vis_idx]),
        dets=np.ascontiguousarray(dets[vis_idx]),
        zs=np.ascontiguousarray(z[vis_idx]),
        alphas=alphas,
        rgbs=np.ascontiguousarray(rgbs),
        rgb_active=rgb_active[vis_idx],
        p_cam=p_cam[vis_idx],
        jac=jac[vis_idx],
        uw=uw[vis_idx],
        cov3d=cov3d[vis_idx],
        rot_mats=rot_mats[vis_idx],
        variances=variances[vis_idx],
        unit_quats=unit_quats[vis_idx],
        quat_norms=np.linalg.norm(cloud.rotations[vis_idx], axis=1),
        tile_start=tile_start,
        tile_items=tile_items,
        bbox=(bx0, bx1, by0, by1),
        n_tiles_x=n_tiles_x,
    )
    return fb, state


def _quat_rotation_adjoint(unit_quats: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Pull a rotation-matrix adjoint back to the normalized quaternion."""
    qw, qx, qy, qz = unit_quats.T
    g = d_rot
    dq = np.empty_like(unit_quats)
    dq[:, 0] = 2.0 * (
        -g[:, 0, 1] * qz
        + g[:, 0, 2] * qy
        + g[:, 1, 0] * qz
        - g[:, 1, 2] * qx
        - g[:, 2, 0] * qy
        + g[:, 2, 1] * qx
    )
    dq[:, 1] = 2.0 * (
        g[:, 0, 1] * qy
        + g[:, 0, 2] * qz
        + g[:, 1, 0] * qy
        - 2.0 * g[:, 1, 1] * qx
        - g[:, 1, 2] * qw
        + g[:, 2, 0] * qz
        + g[:, 2, 1] * qw
        - 2.0 * g[:, 2, 2] * qx
    )
    dq[:, 2] = 2.0 * (
        -2.0 * g[:, 0, 0] * qy
        + g[:, 0, 1] * qx
        + g[:, 0, 2] * qw
        + g[:, 1, 0] * qx
        + g[:, 1, 2] * qz
        - g[:, 2, 0] * qw
        + g[:, 2, 1] * qz
        - 2.0 * g[:, 2, 2] * qy
    )
    dq[:, 3] = 2.0 * (
        -2.0 * g[:, 0, 0] * qz
        - g[:, 0, 1] * qw
        + g[:, 0, 2] * qx
        + g[:, 1, 0] * qw
        - 2.0 * g[:, 1, 1] * qz
        + g[:, 1, 2] * qy
        + g[:, 2, 0] * qx
        + g[:, 2, 1] * qy
    )
    return dq


def render_backward(
    state: RenderState,
    d_color: np.ndarray | None = None,
    d_depth: np.ndarray | None = None,
    d_alpha: np.ndarray | None = None,
) -> GradientBuffer:
    """Gradients of sum(d_color*color) + sum(d_depth*depth) + sum(d_alpha*alpha)
    with respect to every raw Gaussian parameter of the rendered cloud."""
    cam = state.cam
    cfg = state.config
    h, w = cam.height, cam.width

    def _check(adj, shape, name):
        if adj is None:
            return np.zeros(shape)
        adj = np.ascontiguousarray(adj, dtype=np.float64)
        if adj.shape != shape:
            raise ValueError(f"{name} adjoint must have shape {shape}, got {adj.shape}")
        return adj

    d_color = _check(d_color, (h, w, 3), "color")
    d_depth = _check(d_depth, (h, w), "depth")
    d_alpha = _check(d_alpha, (h, w), "alpha")

    grads = GradientBuffer.zeros(state.cloud_size)
    grads.visible[state.vis_idx] = True
    m = len(state.vis_idx)
    if m == 0:
        return grads

    d_rgbs = np.zeros((m, 3))
    d_alphas_act = np.zeros(m)
    d_centers = np.zeros((m, 2))
    d_cov = np.zeros((m, 3))
    d_zs = np.zeros(m)
    bx0, bx1, by0, by1 = state.bbox
    _kernels.composite_backward(
        state.centers,
        state.conics,
        state.cov_abc,
        state.dets,
        state.alphas,
        state.rgbs,
        state.zs,
        bx0,
        bx1,
        by0,
        by1,
        state.tile_start,
        state.tile_items,
        cfg.tile_size,
        state.n_tiles_x,
        state.framebuffer.background,
        cfg.alpha_clamp,
        cfg.alpha_skip,
        cfg.transmittance_min,
        cfg.normalize_depth,
        cfg.depth_eps,
        state.framebuffer.depth,
        state.framebuffer.alpha,
        d_color,
        d_depth,
        d_alpha,
        d_rgbs,
        d_alphas_act,
        d_centers,
        d_cov,
        d_zs,
    )

    # Activations.
    alphas = state.alphas
    grads.d_opacity_logits[state.vis_idx] = d_alphas_act * alphas * (1.0 - alphas)
    grads.d_colors[state.vis_idx] = d_rgbs * SH_C0 * state.rgb_active
    grads.d_means2d[state.vis_idx] = d_centers

    # 2D covariance back to the 3D covariance and the Jacobian.
    ghat = np.empty((m, 2, 2))
    ghat[:, 0, 0] = d_cov[:, 0]
    ghat[:, 0, 1] = 0.5 * d_cov[:, 1]
    ghat[:, 1, 0] = 0.5 * d_cov[:, 1]
    ghat[:, 1, 1] = d_cov[:, 2]
    d_uw = 2.0 * np.einsum("nij,njk,nkl->nil", ghat, state.uw, state.cov3d)
    d_cov3d = np.einsum("nji,njk,nkl->nil", state.uw, ghat, state.uw)
    d_jac = np.einsum("nij,kj->nik", d_uw, cam.rotation)

    # Jacobian entries back to the camera-space point.
    x, y, z = state.p_cam.T
    inv_z2 = 1.0 / (z * z)
    d_pcam = np.zeros((m, 3))
    d_pcam[:, 0] = -cam.fx * inv_z2 * d_jac[:, 0, 2]
    d_pcam[:, 1] = -cam.fy * inv_z2 * d_jac[:, 1, 2]
    d_pcam[:, 2] = (
        -cam.fx * inv_z2 * d_jac[:, 0, 0]
        - cam.fy * inv_z2 * d_jac[:, 1, 1]
        + 2.0 * cam.fx * x * inv_z2 / z * d_jac[:, 0, 2]
        + 2.0 * cam.fy * y * inv_z2 / z * d_jac[:, 1, 2]
    )
    # Projected center back to the camera-space point.
    d_pcam[:, 0] += d_centers[:, 0] * cam.fx / z
    d_pcam[:, 1] += d_centers[:, 1] * cam.fy / z
    d_pcam[:, 2] += (
        -d_centers[:, 0] * cam.fx * x * inv_z2
        - d_centers[:, 1] * cam.fy * y * inv_z2
        + d_zs
    )
    grads.d_positions[state.vis_idx] = d_pcam @ cam.rotation

    # 3D covariance back to scales and rotation quaternion.
    d_vars = np.einsum("nij,nik,njk->nk", d_cov3d, state.rot_mats, state.rot_mats)
    grads.d_log_scales[state.vis_idx] = d_vars * 2.0 * state.variances
    d_rot = 2.0 * np.einsum("nij,njk->nik", d_cov3d, state.rot_mats) * state.variances[:, None, :]
    dq_unit = _quat_rotation_adjoint(state.unit_quats, d_rot)
    dot = np.sum(dq_unit * state.unit_quats, axis=1, keepdims=True)
    grads.d_rotations[state.vis_idx] = (dq_unit - dot * state.unit_quats) / state.quat_norms[
        :, None
    ]
    return grads


def render_reference(
    cloud: GaussianCloud,
    cam: CameraModel,
    background=(0.0, 0.0, 0.0),
    config: RenderConfig = DEFAULT_RENDER_CONFIG,
) -> Framebuffer:
    """Brute-force compositor: per pixel, walk every depth-sorted Gaussian.

    No tiles, no bounding boxes beyond the alpha skip rule itself. Exists as
    the oracle the tiled path must match bit-for-bit.
    """
    background = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = cam.height, cam.width
    out = Framebuffer(
        color=np.empty((h, w, 3)),
        depth=np.zeros((h, w)),
        alpha=np.zeros((h, w)),
        background=background,
    )
    (p_cam, z, centers, _, _, _, _, _, _, _, _, conics, _, visible) = _project_geometry(
        cloud, cam, config
    )
    vis_idx = np.flatnonzero(visible)
    vis_idx = vis_idx[np.argsort(z[vis_idx], kind="stable")]
    alphas = sigmoid(cloud.opacity_logits[vis_idx])
    rgbs = np.maximum(SH_C0 * cloud.colors[vis_idx] + 0.5, 0.0)
    centers = centers[vis_idx]
    conics = conics[vis_idx]
    zs = z[vis_idx]

    # Scalar arithmetic mirrors the compiled kernel op for op (math.exp and
    # libm agree bitwise; numpy's vectorized exp may differ in the last ulp).
    for py in range(h):
        for px in range(w):
            tr = 1.0
            cr = cg = cb = 0.0
            zacc = 0.0
            aacc = 0.0
            for i in range(len(vis_idx)):
                dx = px - centers[i, 0]
                dy = py - centers[i, 1]
                power = -0.5 * (
                    conics[i, 0] * dx * dx
                    + 2.0 * conics[i, 1] * dx * dy
                    + conics[i, 2] * dy * dy
                )
                ap = alphas[i] * math.exp(power)
                if ap > config.alpha_clamp:
                    ap = config.alpha_clamp
                if ap < config.alpha_skip:
                    continue
                tr_next = tr * (1.0 - ap)
                if tr_next < config.transmittance_min:
                    break
                weight = ap * tr
                cr += rgbs[i, 0] * weight
                cg += rgbs[i, 1] * weight
                cb += rgbs[i, 2] * weight
                zacc += zs[i] * weight
                aacc += weight
                tr = tr_next
            out.color[py, px, 0] = cr + tr * background[0]
            out.color[py, px, 1] = cg + tr * background[1]
            out.color[py, px, 2] = cb + tr * background[2]
            out.alpha[py, px] = aacc
            out.depth[py, px] = (
                zacc / (aacc + config.depth_eps) if config.normalize_depth else zacc
            )
    return out
