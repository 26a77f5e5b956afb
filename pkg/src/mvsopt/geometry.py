"""Pinhole projection, cross-view reprojection, bilinear sampling and warping.

Pixel ``(x, y)`` is column ``x``, row ``y`` and samples the continuous point
``(x, y)`` exactly; the valid sampling domain is ``[0, W-1] x [0, H-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_io import Camera

BEHIND_EPS = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``X -> R @ X + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise ValueError("pose rotation is not orthonormal")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """``self after other``."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, X):
        return np.asarray(X) @ self.R.T + self.t


def relative_pose(cam_ref: Camera, cam_src: Camera) -> Pose:
    """Transform taking reference-camera coordinates to source-camera coordinates."""
    R = cam_src.R @ cam_ref.R.T
    return Pose(R, cam_src.t - R @ cam_ref.t)


def as_channels(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    return grid[..., None] if grid.ndim == 2 else grid


def pixel_grid(height: int, width: int):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs, ys


def backproject(camera: Camera, pixel, depth):
    """Camera-frame point ``depth * K^-1 (x, y, 1)``. Broadcasts over leading axes."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("backproject needs positive depth")
    pixel = np.asarray(pixel, dtype=np.float64)
    hom = np.concatenate([pixel, np.ones(pixel.shape[:-1] + (1,))], axis=-1)
    rays = hom @ camera.K_inv.T
    return rays * depth[..., None]


def project(camera: Camera, point):
    """Project camera-frame points; returns ``(pixel, z)``."""
    point = np.asarray(point, dtype=np.float64)
    q = point @ camera.K.T
    z = q[..., 2]
    return q[..., :2] / z[..., None], z


def camera_to_world(camera: Camera, point):
    return (np.asarray(point) - camera.t) @ camera.R


def world_to_camera(camera: Camera, point):
    return np.asarray(point) @ camera.R.T + camera.t


def same_camera(a: Camera, b: Camera) -> bool:
    return a is b or (
        np.array_equal(a.K, b.K) and np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)
    )


def _reproject_xy(cam_ref, cam_src, x, y, depth, with_derivative=False):
    """Vectorised core of :func:`reproject` working on coordinate arrays.

    Returns ``(u, v, z_src, valid)`` and, when requested, ``(du/dZ, dv/dZ)``.
    Identical cameras map every pixel to itself exactly.
    """
    if same_camera(cam_ref, cam_src):
        x, y, depth = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (x, y, depth)))
        valid = depth > BEHIND_EPS
        out = (x.copy(), y.copy(), depth.copy(), valid)
        if with_derivative:
            out += (np.zeros_like(x), np.zeros_like(y))
        return out
    pose = relative_pose(cam_ref, cam_src)
    M = cam_src.K @ pose.R @ cam_ref.K_inv
    b = cam_src.K @ pose.t
    A0 = M[0, 0] * x + M[0, 1] * y + M[0, 2]
    A1 = M[1, 0] * x + M[1, 1] * y + M[1, 2]
    A2 = M[2, 0] * x + M[2, 1] * y + M[2, 2]
    q0 = depth * A0 + b[0]
    q1 = depth * A1 + b[1]
    q2 = depth * A2 + b[2]
    valid = (depth > 0) & (q2 > BEHIND_EPS)
    safe = np.where(valid, q2, 1.0)
    u = q0 / safe
    v = q1 / safe
    if not with_derivative:
        return u, v, q2, valid
    inv2 = 1.0 / (safe * safe)
    du = (A0 * q2 - q0 * A2) * inv2
    dv = (A1 * q2 - q1 * A2) * inv2
    return u, v, q2, valid, du, dv


def reproject(cam_ref: Camera, cam_src: Camera, pixel, depth):
    """Map a reference pixel at ``depth`` into the source view.

    Returns ``(pixel_src, depth_src, valid)``; ``valid`` is False when the point
    lands behind the source camera (z <= 1e-6) instead of raising.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("reproject needs positive depth")
    u, v, z, valid = _reproject_xy(cam_ref, cam_src, pixel[..., 0], pixel[..., 1], depth)
    return np.stack([u, v], axis=-1), z, valid


def _bilinear(grid, x, y, with_grad=False):
    """Sample ``grid`` (H, W, C) at float coordinates; zero and invalid outside."""
    H, W, C = grid.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    valid = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(W - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    v00 = grid[y0, x0]
    v01 = grid[y0, x1]
    v10 = grid[y1, x0]
    v11 = grid[y1, x1]
    # weighted form reproduces stored values exactly at fx, fy in {0, 1}
    top = (1 - fx) * v00 + fx * v01
    bot = (1 - fx) * v10 + fx * v11
    val = (1 - fy) * top + fy * bot
    m = valid[..., None]
    val = np.where(m, val, 0.0)
    if not with_grad:
        return val, valid
    dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    dy = bot - top
    return val, valid, np.where(m, dx, 0.0), np.where(m, dy, 0.0)


def bilinear_sample(grid, pixel):
    """Bilinearly sample ``grid`` at ``pixel`` (``(..., 2)`` as x, y).

    Returns ``(value (..., C), valid (...))``. Out-of-domain samples are 0 and invalid.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    return _bilinear(as_channels(grid), pixel[..., 0], pixel[..., 1])


def bilinear_sample_grad(grid, pixel):
    """Partial derivatives of :func:`bilinear_sample` w.r.t. x and y."""
    pixel = np.asarray(pixel, dtype=np.float64)
    _, _, dx, dy = _bilinear(as_channels(grid), pixel[..., 0], pixel[..., 1], with_grad=True)
    return dx, dy


@dataclass
class Warp:
    """Source image resampled into the reference view."""

    warped: np.ndarray  # (H, W, C)
    mask: np.ndarray  # (H, W) bool
    d_dz: np.ndarray | None = None  # (H, W, C) derivative of warped w.r.t. reference depth


def warp_with_derivative(src, cam_ref, cam_src, depth_map, need_derivative=True) -> Warp:
    src = as_channels(src)
    depth_map = np.asarray(depth_map, dtype=np.float64)
    if depth_map.ndim == 3:
        depth_map = depth_map[..., 0]
    H, W = depth_map.shape
    xs, ys = pixel_grid(H, W)
    if need_derivative:
        u, v, _, ok, du, dv = _reproject_xy(cam_ref, cam_src, xs, ys, depth_map, True)
        val, inb, gx, gy = _bilinear(src, u, v, with_grad=True)
    else:
        u, v, _, ok = _reproject_xy(cam_ref, cam_src, xs, ys, depth_map)
        val, inb = _bilinear(src, u, v)
    mask = ok & inb
    m = mask[..., None]
    warped = np.where(m, val, 0.0)
    d_dz = None
    if need_derivative:
        d_dz = np.where(m, gx * du[..., None] + gy * dv[..., None], 0.0)
    return Warp(warped, mask, d_dz)


def warp_image(src, cam_ref: Camera, cam_src: Camera, depth_map):
    """Resample ``src`` into the reference view using a per-pixel reference depth.

    Returns ``(warped (H, W, C), mask (H, W))``.
    """
    src = as_channels(src)
    depth_map = np.asarray(depth_map, dtype=np.float64)
    if depth_map.ndim == 3:
        depth_map = depth_map[..., 0]
    if depth_map.shape != src.shape[:2]:
        raise ValueError(f"depth map {depth_map.shape} does not match image {src.shape[:2]}")
    w = warp_with_derivative(src, cam_ref, cam_src, depth_map, need_derivative=False)
    return w.warped, w.mask


def plane_homography(cam_ref: Camera, cam_src: Camera, depth: float) -> np.ndarray:
    """Homography induced by the fronto-parallel reference plane ``z = depth``."""
    pose = relative_pose(cam_ref, cam_src)
    n = np.array([0.0, 0.0, 1.0])
    return cam_src.K @ (pose.R + np.outer(pose.t, n) / depth) @ cam_ref.K_inv


def warp_at_hypothesis(src_feature, cam_ref: Camera, cam_src: Camera, depth_hypothesis: float, out_shape=None):
    """Warp a source map onto the reference plane ``z = depth_hypothesis``.

    ``out_shape`` defaults to the source size. Returns ``(warped, mask)``.
    """
    if depth_hypothesis <= 0:
        raise ValueError("depth hypothesis must be positive")
    src = as_channels(src_feature)
    H, W = out_shape if out_shape is not None else src.shape[:2]
    if same_camera(cam_ref, cam_src):
        xs, ys = pixel_grid(H, W)
        val, mask = _bilinear(src, xs, ys)
        return val, mask
    Hm = plane_homography(cam_ref, cam_src, depth_hypothesis)
    xs, ys = pixel_grid(H, W)
    q0 = Hm[0, 0] * xs + Hm[0, 1] * ys + Hm[0, 2]
    q1 = Hm[1, 0] * xs + Hm[1, 1] * ys + Hm[1, 2]
    q2 = Hm[2, 0] * xs + Hm[2, 1] * ys + Hm[2, 2]
    # Source-frame depth of the plane point is depth_hypothesis * q2.
    ok = depth_hypothesis * q2 > BEHIND_EPS
    safe = np.where(ok, q2, 1.0)
    val, inb = _bilinear(src, q0 / safe, q1 / safe)
    mask = ok & inb
    return np.where(mask[..., None], val, 0.0), mask
