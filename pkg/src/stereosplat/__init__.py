"""Self-contained CPU trainer for sparse-view 3D Gaussian splatting.

Builds scene representations from a handful of posed images using three
pillars: a binocular stereo consistency loss on rendered depth (a camera
shifted sideways must see a warp-consistent image), a multiplicative opacity
decay that starves under-constrained Gaussians until pruning removes them,
and dense initialization triangulated from externally supplied keypoint
matches.
"""

from .camera import (
    CameraModel,
    CorrespondenceSet,
    project_point,
    project_points,
    projection_jacobian,
    translate_camera,
    triangulate,
)
from .cloud import (
    SH_C0,
    GaussianCloud,
    build_covariance,
    load_ply,
    project_covariance,
    save_ply,
)
from .density import (
    DensifyConfig,
    DensifyStats,
    accumulate_densify_stats,
    densify_and_prune,
    opacity_decay,
)
from .estimator import GaussianSplattingReconstructor
from .initialization import InitializationError, init_dense, init_random, init_sparse
from .losses import LossValue, color_loss, dssim_loss, l1_loss, psnr, ssim
from .renderer import (
    Framebuffer,
    GradientBuffer,
    RenderConfig,
    render,
    render_backward,
    render_reference,
)
from .sceneio import SceneBundle, load_scene, write_scene
from .stereo import (
    DisparityMap,
    compute_disparity,
    consistency_loss,
    sample_shift,
    warp_right_to_left,
)
from .synthetic import (
    SyntheticSceneSpec,
    fabricate_correspondences,
    finite_diff_gradients,
    make_scene,
)
from .trainer import TrainConfig, TrainLog, TrainingDiverged, train, train_step

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "CorrespondenceSet",
    "DensifyConfig",
    "DensifyStats",
    "DisparityMap",
    "Framebuffer",
    "GaussianCloud",
    "GaussianSplattingReconstructor",
    "GradientBuffer",
    "InitializationError",
    "LossValue",
    "RenderConfig",
    "SceneBundle",
    "SH_C0",
    "SyntheticSceneSpec",
    "TrainConfig",
    "TrainLog",
    "TrainingDiverged",
    "accumulate_densify_stats",
    "build_covariance",
    "color_loss",
    "compute_disparity",
    "consistency_loss",
    "densify_and_prune",
    "dssim_loss",
    "fabricate_correspondences",
    "finite_diff_gradients",
    "init_dense",
    "init_random",
    "init_sparse",
    "l1_loss",
    "load_ply",
    "load_scene",
    "make_scene",
    "opacity_decay",
    "project_covariance",
    "project_point",
    "project_points",
    "projection_jacobian",
    "psnr",
    "render",
    "render_backward",
    "render_reference",
    "sample_shift",
    "save_ply",
    "ssim",
    "train",
    "train_step",
    "translate_camera",
    "triangulate",
    "warp_right_to_left",
    "write_scene",
]
