"""Readers and writers for cameras, images, depth/feature maps and point clouds.

Images, depth maps and feature maps are plain numpy arrays laid out as
``(H, W)`` or ``(H, W, C)``. Depth uses ``0.0`` as the "no estimate" value.
"""

from __future__ import annotations

import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

INVALID_DEPTH = 0.0

_ORTHO_TOL = 1e-6


class FormatError(ValueError):
    """Raised when a file does not follow the expected layout."""


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a world-to-camera extrinsic and a depth sweep range."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    depth_min: float = 1.0
    depth_interval: float = 1.0
    depth_count: int = 1

    def __post_init__(self):
        K = _readonly(self.K)
        R = _readonly(self.R)
        t = _readonly(self.t).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise ValueError(f"K and R must be 3x3, got {K.shape} and {R.shape}")
        if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or abs(K[2, 2] - 1.0) > 1e-12:
            raise ValueError(f"intrinsic not upper-triangular with K[2,2]=1: {K.tolist()}")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError(f"focal lengths must be positive: fx={K[0, 0]}, fy={K[1, 1]}")
        ortho = np.abs(R.T @ R - np.eye(3)).max()
        det = np.linalg.det(R)
        if ortho > _ORTHO_TOL or abs(det - 1.0) > _ORTHO_TOL:
            raise ValueError(
                f"extrinsic not a rotation: |R^T R - I|={ortho:.3g}, det(R)={det:.9g}"
            )
        if not (self.depth_min > 0 and self.depth_interval > 0):
            raise ValueError(
                f"depth range must be positive: min={self.depth_min}, interval={self.depth_interval}"
            )
        if int(self.depth_count) != self.depth_count or self.depth_count < 1:
            raise ValueError(f"depth_count must be a positive integer, got {self.depth_count}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "depth_min", float(self.depth_min))
        object.__setattr__(self, "depth_interval", float(self.depth_interval))
        object.__setattr__(self, "depth_count", int(self.depth_count))

    @property
    def depth_max(self) -> float:
        return self.depth_min + (self.depth_count - 1) * self.depth_interval

    @property
    def hypotheses(self) -> np.ndarray:
        return self.depth_min + np.arange(self.depth_count) * self.depth_interval

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)

    def scaled(self, s: float) -> "Camera":
        """Camera for an image resampled by factor ``s`` (pixel (i, j) -> (s*i, s*j))."""
        K = self.K.copy()
        K[:2] *= s
        return Camera(K, self.R, self.t, self.depth_min, self.depth_interval, self.depth_count)

    def with_depth_range(self, depth_min=None, depth_interval=None, depth_count=None) -> "Camera":
        return Camera(
            self.K,
            self.R,
            self.t,
            self.depth_min if depth_min is None else depth_min,
            self.depth_interval if depth_interval is None else depth_interval,
            self.depth_count if depth_count is None else depth_count,
        )


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValueError(
                    f"colors ({len(self.colors)}) and points ({len(self.points)}) differ in length"
                )

    def __len__(self):
        return len(self.points)


@dataclass
class Scene:
    """Reference view (index 0) followed by its source views."""

    images: list
    cameras: list

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError(f"{len(self.images)} images but {len(self.cameras)} cameras")
        if not self.images:
            raise ValueError("empty scene")

    def subset(self, order) -> "Scene":
        return Scene([self.images[i] for i in order], [self.cameras[i] for i in order])


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------


def _parse_row(line: str, lineno: int, n: int, path) -> list[float]:
    fields = line.split()
    if len(fields) != n:
        raise FormatError(f"{path}:{lineno}: expected {n} numbers, got {len(fields)}: {line!r}")
    out = []
    for k, tok in enumerate(fields):
        try:
            out.append(float(tok))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: field {k + 1} is not a number: {tok!r}") from None
    return out


def load_camera(path) -> Camera:
    """Read a camera text file (extrinsic 4x4, intrinsic 3x3, depth line)."""
    with open(path, encoding="ascii") as f:
        lines = [(i + 1, ln.strip()) for i, ln in enumerate(f)]
    lines = [(i, ln) for i, ln in lines if ln]

    def expect_keyword(pos, word):
        if pos >= len(lines) or lines[pos][1].lower() != word:
            where = lines[pos][0] if pos < len(lines) else "EOF"
            raise FormatError(f"{path}:{where}: expected {word!r}")

    expect_keyword(0, "extrinsic")
    if len(lines) < 10:
        raise FormatError(f"{path}: truncated camera file ({len(lines)} non-empty lines)")
    E = np.array([_parse_row(lines[1 + r][1], lines[1 + r][0], 4, path) for r in range(4)])
    expect_keyword(5, "intrinsic")
    K = np.array([_parse_row(lines[6 + r][1], lines[6 + r][0], 3, path) for r in range(3)])
    lineno, depth_line = lines[9]
    fields = depth_line.split()
    if len(fields) not in (3, 4):
        raise FormatError(
            f"{path}:{lineno}: depth line needs 'min interval count', got {depth_line!r}"
        )
    vals = _parse_row(depth_line, lineno, len(fields), path)
    count = vals[2]
    if count != int(count):
        raise FormatError(f"{path}:{lineno}: field 3 depth count is not an integer: {fields[2]!r}")
    if not np.allclose(E[3], [0, 0, 0, 1]):
        raise FormatError(f"{path}:{lines[4][0]}: last extrinsic row must be 0 0 0 1")
    return Camera(K, E[:3, :3], E[:3, 3], vals[0], vals[1], int(count))


def save_camera(camera: Camera, path) -> None:
    E = np.eye(4)
    E[:3, :3] = camera.R
    E[:3, 3] = camera.t
    rows = ["extrinsic"]
    rows += [" ".join(repr(float(v)) for v in r) for r in E]
    rows += ["", "intrinsic"]
    rows += [" ".join(repr(float(v)) for v in r) for r in camera.K]
    rows += ["", f"{camera.depth_min!r} {camera.depth_interval!r} {camera.depth_count}"]
    _atomic_write(path, ("\n".join(rows) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# 8-bit images
# ---------------------------------------------------------------------------

_IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB image as floats in [0, 1]."""
    suffix = Path(path).suffix.lower()
    if suffix not in _IMAGE_SUFFIXES:
        raise FormatError(f"unsupported image format {suffix!r} for {path}")
    with Image.open(path) as im:
        if im.mode in ("L", "RGB"):
            arr = np.asarray(im)
        elif im.mode in ("LA", "P", "RGBA", "1"):
            arr = np.asarray(im.convert("RGB" if im.mode != "1" else "L"))
        else:
            raise FormatError(f"unsupported image mode {im.mode!r} in {path}")
    if arr.dtype != np.uint8:
        raise FormatError(f"{path}: expected 8-bit samples, got {arr.dtype}")
    return arr.astype(np.float64) / 255.0


def save_image(grid: np.ndarray, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix not in _IMAGE_SUFFIXES:
        raise FormatError(f"unsupported image format {suffix!r} for {path}")
    grid = np.asarray(grid)
    if grid.ndim == 3 and grid.shape[2] == 1:
        grid = grid[..., 0]
    if grid.ndim not in (2, 3) or (grid.ndim == 3 and grid.shape[2] != 3):
        raise ValueError(f"image must be HxW or HxWx3, got shape {grid.shape}")
    if suffix == ".pgm" and grid.ndim != 2:
        raise ValueError("PGM holds a single channel")
    q = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    fmt = {".png": "PNG"}.get(suffix, "PPM")
    tmp = _tmp_path(path)
    Image.fromarray(q).save(tmp, format=fmt)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# PFM depth maps and the multi-channel "PFC" feature container
# ---------------------------------------------------------------------------


def _read_header_line(f) -> str:
    line = f.readline()
    if not line:
        raise FormatError("unexpected end of file in header")
    return line.decode("ascii").strip()


def _read_float_raster(path, identifier: str):
    with open(path, "rb") as f:
        ident = _read_header_line(f)
        if ident != identifier:
            raise FormatError(f"{path}: expected header {identifier!r}, got {ident!r}")
        dims = _read_header_line(f).split()
        want = 3 if identifier == "PFC" else 2
        if len(dims) != want or not all(re.fullmatch(r"\d+", d) for d in dims):
            raise FormatError(f"{path}: malformed dimension line {' '.join(dims)!r}")
        dims = [int(d) for d in dims]
        try:
            scale = float(_read_header_line(f))
        except ValueError:
            raise FormatError(f"{path}: malformed scale line") from None
        if scale == 0:
            raise FormatError(f"{path}: scale must be non-zero")
        payload = f.read()
    w, h = dims[0], dims[1]
    c = dims[2] if identifier == "PFC" else 1
    expected = w * h * c * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, header {w}x{h}x{c} needs {expected}"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w, c)[::-1]
    return data.astype(np.float32), abs(scale)


def _write_float_raster(data: np.ndarray, path, identifier: str) -> None:
    h, w, c = data.shape
    if np.isnan(data).any():
        raise ValueError(f"refusing to write NaN values to {path}")
    dims = f"{w} {h} {c}" if identifier == "PFC" else f"{w} {h}"
    header = f"{identifier}\n{dims}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    _atomic_write(path, header + body)


def load_depth_pfm(path) -> np.ndarray:
    """Load a single-channel PFM as an ``(H, W)`` float32 array."""
    data, _ = _read_float_raster(path, "Pf")
    return data[..., 0]


def save_depth_pfm(grid: np.ndarray, path) -> None:
    grid = np.asarray(grid)
    if grid.ndim == 3 and grid.shape[2] == 1:
        grid = grid[..., 0]
    if grid.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {grid.shape}")
    _write_float_raster(grid[..., None], path, "Pf")


def load_feature_map(path) -> np.ndarray:
    """Load a PFC container as an ``(H, W, C)`` float32 array."""
    data, _ = _read_float_raster(path, "PFC")
    return data


def save_feature_map(grid: np.ndarray, path) -> None:
    grid = np.asarray(grid)
    if grid.ndim == 2:
        grid = grid[..., None]
    if grid.ndim != 3:
        raise ValueError(f"feature map must be HxWxC, got shape {grid.shape}")
    _write_float_raster(grid, path, "PFC")


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def save_pointcloud_ply(cloud: PointCloud, path) -> None:
    n = len(cloud)
    props = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=props)
    for k, name in enumerate("xyz"):
        rec[name] = cloud.points[:, k]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += ["property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        c = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        for k, name in enumerate(("red", "green", "blue")):
            rec[name] = c[:, k]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    _atomic_write(path, ("\n".join(header) + "\n").encode("ascii") + rec.tobytes())


def load_pointcloud_ply(path) -> PointCloud:
    with open(path, "rb") as f:
        if _read_header_line(f) != "ply":
            raise FormatError(f"{path}: missing 'ply' magic")
        fmt = None
        elements: list[tuple[str, int, list]] = []
        while True:
            line = _read_header_line(f)
            tok = line.split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "end_header":
                break
            if tok[0] == "format":
                fmt = tok[1] if len(tok) > 1 else None
            elif tok[0] == "element":
                if len(tok) != 3 or not tok[2].isdigit():
                    raise FormatError(f"{path}: malformed element line {line!r}")
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if not elements:
                    raise FormatError(f"{path}: property before any element")
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise FormatError(f"{path}: unsupported property line {line!r}")
                elements[-1][2].append((tok[2], "<" + _PLY_TYPES[tok[1]]))
            else:
                raise FormatError(f"{path}: unexpected header line {line!r}")
        if fmt != "binary_little_endian":
            raise FormatError(f"{path}: only binary_little_endian PLY is supported, got {fmt!r}")
        payload = f.read()
    offset = 0
    vertex = None
    for name, count, props in elements:
        dt = np.dtype(props)
        size = dt.itemsize * count
        if offset + size > len(payload):
            raise FormatError(f"{path}: element {name!r} declares {count} items but data is short")
        if name == "vertex":
            vertex = np.frombuffer(payload, dtype=dt, count=count, offset=offset)
        offset += size
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes after declared elements")
    if vertex is None:
        raise FormatError(f"{path}: no vertex element")
    names = vertex.dtype.names
    if not all(k in names for k in "xyz"):
        raise FormatError(f"{path}: vertex element lacks x/y/z")
    pts = np.stack([vertex[k].astype(np.float64) for k in "xyz"], axis=1)
    colors = None
    if all(k in names for k in ("red", "green", "blue")):
        colors = np.stack([vertex[k].astype(np.float64) for k in ("red", "green", "blue")], 1) / 255.0
    return PointCloud(pts, colors)


# ---------------------------------------------------------------------------


def _tmp_path(path) -> str:
    path = str(path)
    d, base = os.path.split(path)
    return os.path.join(d, f".{base}.{os.getpid()}.{threading.get_ident()}.tmp")


def _atomic_write(path, data: bytes) -> None:
    tmp = _tmp_path(path)
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_report(values: dict, path=None) -> str:
    """Format ``values`` as ``key=value`` lines; optionally write them to ``path``."""
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())
    if path is not None:
        _atomic_write(path, text.encode("ascii"))
    return text


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# Scene directories: images/NNNNNNNN.png, cams/NNNNNNNN_cam.txt, depths_gt/NNNNNNNN.pfm
# ---------------------------------------------------------------------------


def view_name(i: int) -> str:
    return f"{i:08d}"


def scene_views(scene_dir) -> list[int]:
    cams = Path(scene_dir) / "cams"
    if not cams.is_dir():
        raise FileNotFoundError(f"{cams} is not a directory")
    ids = sorted(int(p.name.split("_")[0]) for p in cams.glob("*_cam.txt"))
    if not ids:
        raise FileNotFoundError(f"no camera files in {cams}")
    return ids


def _find_image(scene_dir, i):
    for suffix in (".png", ".ppm", ".pgm"):
        p = Path(scene_dir) / "images" / (view_name(i) + suffix)
        if p.exists():
            return p
    raise FileNotFoundError(f"no image for view {i} in {scene_dir}/images")


def load_scene_dir(scene_dir) -> Scene:
    """All views of a scene directory, in view-id order."""
    ids = scene_views(scene_dir)
    images = [load_image(_find_image(scene_dir, i)) for i in ids]
    cams = [load_camera(Path(scene_dir) / "cams" / f"{view_name(i)}_cam.txt") for i in ids]
    return Scene(images, cams)


def save_scene_dir(scene: Scene, scene_dir, gt_depths=None) -> None:
    root = Path(scene_dir)
    for sub in ("images", "cams") + (("depths_gt",) if gt_depths is not None else ()):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, (img, cam) in enumerate(zip(scene.images, scene.cameras)):
        save_image(img, root / "images" / f"{view_name(i)}.png")
        save_camera(cam, root / "cams" / f"{view_name(i)}_cam.txt")
        if gt_depths is not None:
            save_depth_pfm(gt_depths[i], root / "depths_gt" / f"{view_name(i)}.pfm")
