"""Ray-cast renderer for textured planes, spheres and boxes under Lambertian shading.

Textures are sums of random 3-D sinusoids evaluated at the surface point, so
every view sees the same albedo at the same world point and images agree with
the warping conventions in :mod:`mvsopt.geometry` up to interpolation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import pixel_grid
from .scene_io import Camera, Scene


@dataclass
class SceneSpec:
    geometry: str = "plane"  # plane | sphere | box
    width: int = 128
    height: int = 128
    focal: float = 200.0
    views: int = 3
    baseline: float = 100.0
    target_depth: float = 600.0
    plane_depth: float = 600.0
    plane_tilt_deg: float = 0.0
    sphere_center: tuple = (0.0, 0.0, 600.0)
    sphere_radius: float = 150.0
    box_min: tuple = (-80.0, -80.0, 520.0)
    box_max: tuple = (80.0, 80.0, 620.0)
    backdrop_depth: float = 700.0
    texture_seed: int = 0
    texture_waves: int = 16
    wavelength_px: tuple = (6.0, 20.0)
    channels: int = 1
    light: tuple = (0.3, -0.4, -1.0)
    ambient: float = 0.3
    depth_min: float = 500.0
    depth_interval: float = 3.125
    depth_count: int = 64
    centers: list = field(default_factory=list)

    def __post_init__(self):
        if self.geometry not in ("plane", "sphere", "box"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.width < 2 or self.height < 2 or self.views < 1:
            raise ValueError("image size must be at least 2x2 and views >= 1")
        if self.focal <= 0 or self.sphere_radius <= 0:
            raise ValueError("focal and sphere_radius must be positive")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if any(a >= b for a, b in zip(self.box_min, self.box_max)):
            raise ValueError("box_min must be below box_max on every axis")
        if self.centers and len(self.centers) != self.views:
            raise ValueError(f"{len(self.centers)} camera centres for {self.views} views")


def parse_scene_spec(text: str) -> SceneSpec:
    """Parse ``key = value`` lines; ``center.N = x y z`` sets explicit camera centres."""
    kinds = {f.name: f for f in fields(SceneSpec)}
    kw, centers = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("center."):
            centers[int(key.split(".", 1)[1])] = tuple(float(v) for v in val.split())
            continue
        if key not in kinds or key == "centers":
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        default = kinds[key].default
        if isinstance(default, tuple):
            kw[key] = tuple(float(v) for v in val.split())
        elif isinstance(default, bool):
            kw[key] = val.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            kw[key] = int(val)
        elif isinstance(default, float):
            kw[key] = float(val)
        else:
            kw[key] = val
    if centers:
        kw["centers"] = [centers[i] for i in sorted(centers)]
    return SceneSpec(**kw)


def look_at(center, target) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``center`` looking at ``target`` (y down)."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ center


def default_centers(spec: SceneSpec):
    b = spec.baseline
    ring = [(0, 0), (b, 0), (-b, 0), (0, b), (0, -b), (b, b), (-b, -b), (b, -b), (-b, b)]
    if spec.views > len(ring):
        raise ValueError(f"at most {len(ring)} default views; give center.N keys")
    return [(x, y, 0.0) for x, y in ring[: spec.views]]


def make_cameras(spec: SceneSpec) -> list[Camera]:
    K = np.array([[spec.focal, 0, (spec.width - 1) / 2],
                  [0, spec.focal, (spec.height - 1) / 2],
                  [0, 0, 1.0]])
    centers = spec.centers or default_centers(spec)
    target = (0.0, 0.0, spec.target_depth)
    cams = []
    for c in centers:
        if np.allclose(np.asarray(c)[:2], 0) and c[2] < spec.target_depth:
            R, t = np.eye(3), -np.asarray(c, dtype=np.float64)
        else:
            R, t = look_at(c, target)
        cams.append(Camera(K, R, t, spec.depth_min, spec.depth_interval, spec.depth_count))
    return cams


def plane_normal(spec: SceneSpec) -> np.ndarray:
    """Camera-facing unit normal of the plane, tilted about the y axis."""
    a = math.radians(spec.plane_tilt_deg)
    return np.array([math.sin(a), 0.0, -math.cos(a)])


# ---------------------------------------------------------------------------
# Ray intersection. Rays are C + t d with d = R^T K^-1 (x, y, 1), so t is camera depth.
# ---------------------------------------------------------------------------


def _hit_plane(C, d, point, normal):
    den = d @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((point - C) @ normal) / den
    t = np.where((np.abs(den) > 1e-12) & (t > 0), t, np.inf)
    n = np.broadcast_to(normal, d.shape)
    return t, n


def _hit_sphere(C, d, center, radius):
    oc = C - center
    a = np.einsum("...i,...i->...", d, d)
    b = 2 * d @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4 * a * c
    sq = np.sqrt(np.maximum(disc, 0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 0, t0, t1)
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    P = C + t[..., None] * d
    n = (P - center) / radius
    return t, np.where(np.isfinite(t)[..., None], n, 0.0)


def _hit_box(C, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - C) * inv
        t2 = (hi - C) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    axis = tmin.argmax(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    t = np.where(hit, t_near, np.inf)
    n = np.zeros(d.shape)
    sign = -np.sign(np.take_along_axis(d, axis[..., None], -1))[..., 0]
    np.put_along_axis(n, axis[..., None], sign[..., None], -1)
    return t, n


def _texture(spec: SceneSpec, P, channel):
    rng = np.random.default_rng([spec.texture_seed, channel])
    footprint = spec.target_depth / spec.focal
    lam_lo, lam_hi = (w * footprint for w in spec.wavelength_px)
    n = spec.texture_waves
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    lam = np.exp(rng.uniform(math.log(lam_lo), math.log(lam_hi), size=n))
    phase = rng.uniform(0, 2 * math.pi, size=n)
    amp = rng.uniform(0.5, 1.0, size=n)
    amp *= 0.42 / amp.sum()
    arg = P @ (dirs / lam[:, None]).T * (2 * math.pi) + phase
    return 0.5 + np.sin(arg) @ amp


def render_view(spec: SceneSpec, camera: Camera):
    """Image (H, W) or (H, W, 3) and ground-truth depth (H, W); misses get depth 0."""
    xs, ys = pixel_grid(spec.height, spec.width)
    hom = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
    d = hom @ (camera.R.T @ camera.K_inv).T
    C = camera.center
    hits = []
    if spec.geometry == "plane":
        normal = plane_normal(spec)
        hits.append(_hit_plane(C, d, np.array([0.0, 0.0, spec.plane_depth]), normal))
    else:
        back = np.array([0.0, 0.0, -1.0])
        hits.append(_hit_plane(C, d, np.array([0.0, 0.0, spec.backdrop_depth]), back))
        if spec.geometry == "sphere":
            hits.append(_hit_sphere(C, d, np.asarray(spec.sphere_center), spec.sphere_radius))
        else:
            hits.append(_hit_box(C, d, np.asarray(spec.box_min), np.asarray(spec.box_max)))
    ts = np.stack([h[0] for h in hits])
    ns = np.stack([h[1] for h in hits])
    which = ts.argmin(axis=0)
    t = np.take_along_axis(ts, which[None], 0)[0]
    n = np.take_along_axis(ns, which[None, ..., None], 0)[0]
    hit = np.isfinite(t)
    depth = np.where(hit, t, 0.0)
    P = C + np.where(hit, t, 0.0)[..., None] * d
    light = np.asarray(spec.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = spec.ambient + (1 - spec.ambient) * np.abs(n @ light)
    chans = [np.clip(_texture(spec, P, c) * shade, 0, 1) for c in range(spec.channels)]
    img = np.stack(chans, axis=-1) if spec.channels == 3 else chans[0]
    img = np.where(hit[..., None] if img.ndim == 3 else hit, img, 0.0)
    return img, depth


def render_synthetic_scene(spec: SceneSpec | dict | str):
    """Render every view; returns ``(Scene, [gt depth per view])``."""
    if isinstance(spec, str):
        spec = parse_scene_spec(spec)
    elif isinstance(spec, dict):
        spec = SceneSpec(**spec)
    cams = make_cameras(spec)
    images, depths = [], []
    for cam in cams:
        img, depth = render_view(spec, cam)
        images.append(img)
        depths.append(depth)
    return Scene(images, cams), depths
