"""Scene directories, correspondence files, images, depth maps, point clouds.

A scene directory holds a ``scene.json`` manifest (version 1):

    {
      "version": 1,
      "cameras": [{"id", "fx", "fy", "cx", "cy", "width", "height",
                   "rotation": [9 row-major floats], "translation": [3]}],
      "train": [ids], "test": [ids],
      "images": {id: relative path},
      "depths": {id: relative path},          # optional
      "init_ply": relative path,              # optional, point cloud
      "correspondences": relative path        # optional
    }

Color images are 8-bit PNG; depth maps are little-endian PFM. The
correspondence file is JSON: {"version": 1, "pairs": [{"view_a", "view_b",
"matches": [[x_a, y_a, x_b, y_b, confidence], ...]}]}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraModel, CorrespondenceSet

__all__ = [
    "SceneFormatError",
    "SceneBundle",
    "load_scene",
    "write_scene",
    "load_correspondences",
    "save_correspondences",
    "load_image",
    "save_image",
    "read_pfm",
    "write_pfm",
    "save_depth_png16",
    "read_point_ply",
    "write_point_ply",
]

SCHEMA_VERSION = 1
DEPTH_PNG16_SCALE = 1000.0  # depth units encoded as integer millidistances


class SceneFormatError(ValueError):
    """Raised for malformed scene manifests, images, or sidecar files."""


# Images -------------------------------------------------------------------

def save_image(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as deterministic 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG", compress_level=6)


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def image_size(path) -> tuple[int, int]:
    """(width, height) from the header without decoding pixel data."""
    with Image.open(path) as img:
        return img.size


# PFM depth maps -----------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale little-endian PFM; rows stored bottom-to-top per the format."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a 2D map")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise SceneFormatError(f"{path}: not a grayscale PFM file")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        payload = fh.read(width * height * 4)
        if len(payload) != width * height * 4:
            raise SceneFormatError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return np.ascontiguousarray(arr[::-1]).astype(np.float64)


def save_depth_png16(path, depth: np.ndarray) -> None:
    """Quantized 16-bit PNG alternative for viewers without PFM support."""
    q = np.clip(np.round(np.asarray(depth) * DEPTH_PNG16_SCALE), 0, 65535).astype(np.uint16)
    Image.fromarray(q, mode="I;16").save(path, format="PNG")


# Point-cloud PLY (positions + optional colors) -----------------------------

def write_point_ply(path, positions: np.ndarray, colors: np.ndarray | None = None) -> None:
    """Binary little-endian point PLY; colors are optional uint8 RGB in [0,1]."""
    positions = np.asarray(positions, dtype="<f4").reshape(-1, 3)
    n = len(positions)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += ["property float x", "property float y", "property float z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if colors is None:
            fh.write(positions.tobytes())
        else:
            rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
            row = np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)])
            packed = np.empty(n, dtype=row)
            packed["xyz"] = positions
            packed["rgb"] = rgb.reshape(-1, 3)
            fh.write(packed.tobytes())


_PLY_SCALAR = {
    b"float": ("<f4", 4),
    b"float32": ("<f4", 4),
    b"double": ("<f8", 8),
    b"uchar": ("u1", 1),
    b"uint8": ("u1", 1),
    b"int": ("<i4", 4),
    b"int32": ("<i4", 4),
    b"uint": ("<u4", 4),
    b"uint32": ("<u4", 4),
}


def read_point_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Parse x/y/z (+ optional red/green/blue) vertices from an ASCII or
    binary little-endian PLY. Returns (positions, colors in [0,1] or None)."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        header_end = data.index(b"end_header")
    except ValueError:
        raise SceneFormatError(f"{path}: missing end_header") from None
    header_lines = data[:header_end].split(b"\n")
    payload = data[header_end:]
    payload = payload[payload.index(b"\n") + 1 :]

    if not header_lines or header_lines[0].strip() != b"ply":
        raise SceneFormatError(f"{path}: not a PLY file")
    fmt = None
    count = None
    props: list[tuple[str, str, int]] = []
    in_vertex = False
    for line in header_lines[1:]:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == b"format":
            fmt = parts[1]
        elif parts[0] == b"element":
            in_vertex = parts[1] == b"vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == b"property" and in_vertex:
            if parts[1] == b"list":
                raise SceneFormatError(f"{path}: list properties unsupported")
            if parts[1] not in _PLY_SCALAR:
                raise SceneFormatError(f"{path}: unsupported type {parts[1].decode()}")
            dtype, size = _PLY_SCALAR[parts[1]]
            props.append((parts[2].decode("ascii"), dtype, size))
    if count is None:
        raise SceneFormatError(f"{path}: no vertex element")
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise SceneFormatError(f"{path}: vertices lack x/y/z properties")
    if count == 0:
        raise SceneFormatError(f"{path}: empty point cloud")

    if fmt == b"ascii":
        rows = payload.split(b"\n")
        table = np.empty((count, len(props)))
        filled = 0
        for row in rows:
            row = row.strip()
            if not row:
                continue
            vals = row.split()
            if len(vals) != len(props):
                raise SceneFormatError(f"{path}: bad ASCII vertex row")
            table[filled] = [float(v) for v in vals]
            filled += 1
            if filled == count:
                break
        if filled != count:
            raise SceneFormatError(f"{path}: truncated ASCII payload")
        columns = {name: table[:, i] for i, (name, _, _) in enumerate(props)}
    elif fmt == b"binary_little_endian":
        dtype = np.dtype([(name, dt) for name, dt, _ in props])
        expected = count * dtype.itemsize
        if len(payload) < expected:
            raise SceneFormatError(f"{path}: truncated binary payload")
        table = np.frombuffer(payload[:expected], dtype=dtype)
        columns = {name: table[name].astype(np.float64) for name, _, _ in props}
    else:
        raise SceneFormatError(f"{path}: unsupported PLY format {fmt!r}")

    positions = np.column_stack([columns["x"], columns["y"], columns["z"]])
    colors = None
    if {"red", "green", "blue"} <= set(names):
        colors = np.column_stack([columns["red"], columns["green"], columns["blue"]])
        prop_types = {name: dt for name, dt, _ in props}
        if prop_types["red"] == "u1":
            colors = colors / 255.0
    return positions, colors


# Correspondences -----------------------------------------------------------

def save_correspondences(path, sets) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "pairs": [
            {
                "view_a": s.view_a,
                "view_b": s.view_b,
                "matches": [[float(v) for v in row] for row in s.matches],
            }
            for s in sets
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_correspondences(path) -> list[CorrespondenceSet]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("version") != SCHEMA_VERSION:
        raise SceneFormatError(f"{path}: unsupported correspondence version")
    sets = []
    for pair in doc.get("pairs", []):
        sets.append(
            CorrespondenceSet(
                view_a=pair["view_a"],
                view_b=pair["view_b"],
                matches=np.asarray(pair["matches"], dtype=np.float64).reshape(-1, 5),
            )
        )
    return sets


# Scene manifests ------------------------------------------------------------

@dataclass
class SceneBundle:
    """A scene directory resolved into cameras, splits, and lazy image access."""

    root: Path
    cameras: dict[str, CameraModel]
    train_ids: list[str]
    test_ids: list[str]
    image_paths: dict[str, Path]
    depth_paths: dict[str, Path] = field(default_factory=dict)
    init_ply_path: Path | None = None
    correspondence_path: Path | None = None
    _image_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def image(self, view_id: str) -> np.ndarray:
        if view_id not in self._image_cache:
            self._image_cache[view_id] = load_image(self.image_paths[view_id])
        return self._image_cache[view_id]

    def depth(self, view_id: str) -> np.ndarray | None:
        path = self.depth_paths.get(view_id)
        return None if path is None else read_pfm(path)

    def correspondences(self) -> list[CorrespondenceSet]:
        if self.correspondence_path is None:
            return []
        return load_correspondences(self.correspondence_path)


def _camera_from_entry(entry: dict) -> CameraModel:
    try:
        return CameraModel(
            fx=float(entry["fx"]),
            fy=float(entry["fy"]),
            cx=float(entry["cx"]),
            cy=float(entry["cy"]),
            width=int(entry["width"]),
            height=int(entry["height"]),
            rotation=np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(entry["translation"], dtype=np.float64),
            near=float(entry.get("near", 0.01)),
        )
    except (KeyError, ValueError) as exc:
        raise SceneFormatError(f"camera entry {entry.get('id', '?')!r}: {exc}") from None


def load_scene(scene_dir) -> SceneBundle:
    """Parse and validate a scene directory.

    Only image headers are touched here; pixel data loads lazily on access.
    """
    root = Path(scene_dir)
    manifest = root / "scene.json"
    if not manifest.is_file():
        raise SceneFormatError(f"{root}: no scene.json manifest")
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{manifest}: invalid JSON ({exc})") from None
    if doc.get("version") != SCHEMA_VERSION:
        raise SceneFormatError(f"{manifest}: unsupported scene version {doc.get('version')!r}")

    cameras: dict[str, CameraModel] = {}
    for entry in doc.get("cameras", []):
        cam_id = entry.get("id")
        if not isinstance(cam_id, str):
            raise SceneFormatError(f"{manifest}: camera without a string id")
        if cam_id in cameras:
            raise SceneFormatError(f"{manifest}: duplicate camera id {cam_id!r}")
        cameras[cam_id] = _camera_from_entry(entry)

    train_ids = list(doc.get("train", []))
    test_ids = list(doc.get("test", []))
    for vid in train_ids + test_ids:
        if vid not in cameras:
            raise SceneFormatError(f"{manifest}: split references unknown view {vid!r}")
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise SceneFormatError(f"{manifest}: views {sorted(overlap)} are in both splits")

    image_paths: dict[str, Path] = {}
    for vid, rel in doc.get("images", {}).items():
        if vid not in cameras:
            raise SceneFormatError(f"{manifest}: image for unknown view {vid!r}")
        path = root / rel
        if not path.is_file():
            raise SceneFormatError(f"missing image for view {vid!r}: {path}")
        cam = cameras[vid]
        size = image_size(path)
        if size != (cam.width, cam.height):
            raise SceneFormatError(
                f"view {vid!r}: image is {size[0]}x{size[1]} but camera declares "
                f"{cam.width}x{cam.height}"
            )
        image_paths[vid] = path
    for vid in train_ids + test_ids:
        if vid not in image_paths:
            raise SceneFormatError(f"{manifest}: view {vid!r} has no image")

    depth_paths: dict[str, Path] = {}
    for vid, rel in doc.get("depths", {}).items():
        if vid not in cameras:
            raise SceneFormatError(f"{manifest}: depth for unknown view {vid!r}")
        path = root / rel
        if not path.is_file():
            raise SceneFormatError(f"missing depth for view {vid!r}: {path}")
        depth_paths[vid] = path

    init_ply = doc.get("init_ply")
    init_ply_path = None
    if init_ply is not None:
        init_ply_path = root / init_ply
        if not init_ply_path.is_file():
            raise SceneFormatError(f"missing init point cloud: {init_ply_path}")

    corr = doc.get("correspondences")
    corr_path = None
    if corr is not None:
        corr_path = root / corr
        if not corr_path.is_file():
            raise SceneFormatError(f"missing correspondence file: {corr_path}")

    return SceneBundle(
        root=root,
        cameras=cameras,
        train_ids=train_ids,
        test_ids=test_ids,
        image_paths=image_paths,
        depth_paths=depth_paths,
        init_ply_path=init_ply_path,
        correspondence_path=corr_path,
    )


def write_scene(
    scene_dir,
    cameras: dict[str, CameraModel],
    train_ids,
    test_ids,
    images: dict[str, np.ndarray],
    depths: dict[str, np.ndarray] | None = None,
    correspondence_sets=None,
    init_points: np.ndarray | None = None,
    init_colors: np.ndarray | None = None,
) -> Path:
    """Materialize a scene directory in the manifest format load_scene reads."""
    root = Path(scene_dir)
    root.mkdir(parents=True, exist_ok=True)
    doc: dict = {"version": SCHEMA_VERSION, "cameras": [], "train": list(train_ids), "test": list(test_ids)}
    for cam_id in sorted(cameras):
        cam = cameras[cam_id]
        doc["cameras"].append(
            {
                "id": cam_id,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
                "rotation": [float(v) for v in cam.rotation.ravel()],
                "translation": [float(v) for v in cam.translation],
                "near": cam.near,
            }
        )
    doc["images"] = {}
    for vid in sorted(images):
        rel = f"images/{vid}.png"
        (root / "images").mkdir(exist_ok=True)
        save_image(root / rel, images[vid])
        doc["images"][vid] = rel
    if depths:
        doc["depths"] = {}
        for vid in sorted(depths):
            rel = f"depths/{vid}.pfm"
            (root / "depths").mkdir(exist_ok=True)
            write_pfm(root / rel, depths[vid])
            doc["depths"][vid] = rel
    if correspondence_sets:
        save_correspondences(root / "correspondences.json", correspondence_sets)
        doc["correspondences"] = "correspondences.json"
    if init_points is not None:
        write_point_ply(root / "init_points.ply", init_points, init_colors)
        doc["init_ply"] = "init_points.ply"
    (root / "scene.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    return root
