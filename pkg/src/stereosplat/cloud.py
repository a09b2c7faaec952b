"""Gaussian cloud storage, activations, covariance construction, and PLY IO.

Raw (unconstrained) parameterization, activated on use:
  - opacity stored as a logit, alpha = sigmoid(logit)
  - scale stored as log, S = exp(log_scale)
  - rotation stored as an unnormalized quaternion (w, x, y, z), normalized on use
  - color stored as the DC spherical-harmonic coefficient,
    rgb = clamp(SH_C0 * f + 0.5, 0, inf)
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SH_C0",
    "GaussianCloud",
    "PlyFormatError",
    "build_covariance",
    "project_covariance",
    "quat_to_rotation",
    "rgb_to_feature",
    "feature_to_rgb",
    "sigmoid",
    "logit",
    "save_ply",
    "load_ply",
]

SH_C0 = 0.28209479177387814

# Isotropic dilation added to each diagonal entry of the projected 2D
# covariance so sub-pixel splats keep a renderable footprint.
COV2D_DILATION = 0.3


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def rgb_to_feature(rgb):
    """Invert the DC color activation (ignoring the clamp at zero)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def feature_to_rgb(feature):
    return np.maximum(SH_C0 * np.asarray(feature, dtype=np.float64) + 0.5, 0.0)


@dataclass
class GaussianCloud:
    """Structure-of-arrays of raw per-Gaussian parameters.

    positions (N,3), rotations (N,4), log_scales (N,3), opacity_logits (N,),
    colors (N,3). All float64 and row-aligned.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(
            self.opacity_logits, dtype=np.float64
        ).reshape(n)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(n, 3)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(
            positions=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)),
        )

    @classmethod
    def concatenate(cls, clouds) -> "GaussianCloud":
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        return cls(
            positions=np.concatenate([c.positions for c in clouds]),
            rotations=np.concatenate([c.rotations for c in clouds]),
            log_scales=np.concatenate([c.log_scales for c in clouds]),
            opacity_logits=np.concatenate([c.opacity_logits for c in clouds]),
            colors=np.concatenate([c.colors for c in clouds]),
        )

    def clone(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
        )

    def select(self, index) -> "GaussianCloud":
        """New cloud holding the rows picked by a boolean mask or index array."""
        return GaussianCloud(
            positions=self.positions[index],
            rotations=self.rotations[index],
            log_scales=self.log_scales[index],
            opacity_logits=self.opacity_logits[index],
            colors=self.colors[index],
        )

    # Activated views -----------------------------------------------------

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def rgb(self) -> np.ndarray:
        return feature_to_rgb(self.colors)

    def unit_rotations(self) -> np.ndarray:
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        return self.rotations / norms

    def activated(self, index: int):
        """(position, rotation matrix, scales, alpha, rgb) for one Gaussian."""
        assert 0 <= index < len(self), "Gaussian index out of range"
        return (
            self.positions[index].copy(),
            quat_to_rotation(self.rotations[index]),
            np.exp(self.log_scales[index]),
            float(sigmoid(self.opacity_logits[index])),
            feature_to_rgb(self.colors[index]),
        )


def quat_to_rotation(quat) -> np.ndarray:
    """Rotation matrix of an unnormalized (w, x, y, z) quaternion."""
    q = np.asarray(quat, dtype=np.float64)
    n = np.linalg.norm(q)
    assert n > 1e-12, "degenerate quaternion"
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_rotations(quats: np.ndarray) -> np.ndarray:
    """Batch quaternion-to-matrix: (N,4) -> (N,3,3)."""
    q = np.asarray(quats, dtype=np.float64)
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / norms).T
    rot = np.empty((len(q), 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def build_covariance(quat, log_scale) -> np.ndarray:
    """3x3 world-space covariance R S S^T R^T (symmetric PSD)."""
    rot = quat_to_rotation(quat)
    var = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    return (rot * var) @ rot.T


def project_covariance(cov3d: np.ndarray, cam_rotation: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """2x2 image-space covariance J W Sigma W^T J^T plus the diagonal dilation."""
    u = np.asarray(jac, dtype=np.float64) @ np.asarray(cam_rotation, dtype=np.float64)
    cov2d = u @ np.asarray(cov3d, dtype=np.float64) @ u.T
    return cov2d + COV2D_DILATION * np.eye(2)


# PLY serialization --------------------------------------------------------

class PlyFormatError(ValueError):
    """Raised when PLY bytes do not match the expected Gaussian vertex layout."""


_PLY_PROPERTIES = (
    "x", "y", "z",
    "nx", "ny", "nz",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


def save_ply(cloud: GaussianCloud) -> bytes:
    """Serialize to binary little-endian PLY with the common 3DGS vertex layout.

    Properties are float32; normals are written as zeros. Raw (pre-activation)
    values are stored, so external viewers and load_ply see the exact
    parameterization.
    """
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in _PLY_PROPERTIES]
    header.append("end_header")
    data = np.empty((n, len(_PLY_PROPERTIES)), dtype="<f4")
    data[:, 0:3] = cloud.positions
    data[:, 3:6] = 0.0
    data[:, 6:9] = cloud.colors
    data[:, 9] = cloud.opacity_logits
    data[:, 10:13] = cloud.log_scales
    data[:, 13:17] = cloud.rotations
    return ("\n".join(header) + "\n").encode("ascii") + data.tobytes()


def _read_ply_header(stream: io.BytesIO):
    magic = stream.readline().strip()
    if magic != b"ply":
        raise PlyFormatError("not a PLY file (missing 'ply' magic)")
    fmt = stream.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise PlyFormatError(f"unsupported PLY format line: {fmt.decode(errors='replace')}")
    count = None
    props = []
    while True:
        line = stream.readline()
        if not line:
            raise PlyFormatError("unterminated PLY header")
        line = line.strip()
        if line == b"end_header":
            break
        parts = line.split()
        if parts[0] == b"element":
            if parts[1] != b"vertex":
                raise PlyFormatError(f"unexpected element {parts[1].decode()}")
            count = int(parts[2])
        elif parts[0] == b"property":
            if parts[1] != b"float":
                raise PlyFormatError(f"unsupported property type {parts[1].decode()}")
            props.append(parts[2].decode("ascii"))
        elif parts[0] == b"comment":
            continue
        else:
            raise PlyFormatError(f"unexpected header line: {line.decode(errors='replace')}")
    if count is None:
        raise PlyFormatError("PLY header missing vertex element")
    return count, props


def load_ply(data: bytes) -> GaussianCloud:
    """Parse bytes produced by save_ply back into a GaussianCloud."""
    stream = io.BytesIO(data)
    count, props = _read_ply_header(stream)
    if tuple(props) != _PLY_PROPERTIES:
        raise PlyFormatError(
            "PLY vertex properties do not match the Gaussian layout: "
            f"got {props}"
        )
    payload = stream.read()
    expected = count * len(_PLY_PROPERTIES) * 4
    if len(payload) < expected:
        raise PlyFormatError(
            f"truncated PLY payload: expected {expected} bytes for {count} vertices, "
            f"got {len(payload)}"
        )
    if len(payload) > expected:
        raise PlyFormatError("trailing bytes after PLY vertex data")
    table = np.frombuffer(payload, dtype="<f4").reshape(count, len(_PLY_PROPERTIES))
    return GaussianCloud(
        positions=table[:, 0:3],
        rotations=table[:, 13:17],
        log_scales=table[:, 10:13],
        opacity_logits=table[:, 9],
        colors=table[:, 6:9],
    )
