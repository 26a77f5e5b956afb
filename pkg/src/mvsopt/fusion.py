"""Depth-map filtering and fusion into a single point cloud.

A pixel survives when its confidence reaches the photometric threshold and
its depth agrees, by forward-backward reprojection, with at least
``min_views`` other views. Survivors are lifted to world space and averaged
with the matching points seen from the agreeing views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import _bilinear, _reproject_xy, as_channels, camera_to_world, pixel_grid
from .normal_depth import rays
from .scene_io import PointCloud


@dataclass
class FusionParams:
    photo_threshold: float = 0.6
    geo_pixel_tol: float = 1.0
    geo_depth_tol: float = 0.01
    min_views: int = 2

    def __post_init__(self):
        if not 0 <= self.photo_threshold <= 1:
            raise ValueError("photo_threshold must lie in [0, 1]")
        if self.min_views < 1:
            raise ValueError("min_views must be >= 1")


@dataclass
class Consistency:
    """Forward-backward check of view ``i`` against view ``j``."""

    ok: np.ndarray  # (H, W) bool
    world: np.ndarray  # (H, W, 3) point seen by view j, valid where ok


def check_pair(depth_i, cam_i, depth_j, cam_j, pixel_tol, depth_tol) -> Consistency:
    depth_i = np.asarray(depth_i, dtype=np.float64)
    depth_j = np.asarray(depth_j, dtype=np.float64)
    H, W = depth_i.shape
    xs, ys = pixel_grid(H, W)
    u, v, _, ok = _reproject_xy(cam_i, cam_j, xs, ys, depth_i)
    u = np.where(ok, u, -1.0)
    v = np.where(ok, v, -1.0)
    zj, inb = _bilinear(as_channels(depth_j), u, v)
    zj = zj[..., 0]
    # all four bilinear supports must carry a depth
    Hj, Wj = depth_j.shape
    x0 = np.minimum(np.floor(np.where(inb, u, 0)), max(Wj - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(np.where(inb, v, 0)), max(Hj - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, Wj - 1)
    y1 = np.minimum(y0 + 1, Hj - 1)
    valid_j = depth_j > 0
    full = valid_j[y0, x0] & valid_j[y0, x1] & valid_j[y1, x0] & valid_j[y1, x1]
    ok = ok & inb & full
    zj = np.where(ok, zj, 1.0)
    ub, vb, zb, back_ok = _reproject_xy(cam_j, cam_i, u, v, zj)
    ok &= back_ok
    pix_err = np.hypot(ub - xs, vb - ys)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.abs(zb - depth_i) / np.where(depth_i > 0, depth_i, 1.0)
    ok &= (depth_i > 0) & (pix_err < pixel_tol) & (rel < depth_tol)
    Pj = np.stack([u, v, np.ones_like(u)], axis=-1) @ cam_j.K_inv.T * zj[..., None]
    world = camera_to_world(cam_j, Pj)
    return Consistency(ok, np.where(ok[..., None], world, 0.0))


def _pair_checks(depths, cameras, params):
    n = len(depths)
    return {
        (i, j): check_pair(depths[i], cameras[i], depths[j], cameras[j],
                           params.geo_pixel_tol, params.geo_depth_tol)
        for i in range(n) for j in range(n) if i != j
    }


def filter_depth(depths, confidences, cameras, photo_threshold=0.6, geo_pixel_tol=1.0,
                 geo_depth_tol=0.01, min_views=2):
    """Zero out pixels failing the confidence or multi-view consistency test."""
    params = FusionParams(photo_threshold, geo_pixel_tol, geo_depth_tol, min_views)
    return filter_depths(depths, confidences, cameras, params)[0]


def filter_depths(depths, confidences, cameras, params: FusionParams):
    """Like :func:`filter_depth` but also returns per-view survivor counts and pair checks."""
    if not (len(depths) == len(confidences) == len(cameras)):
        raise ValueError(
            f"{len(depths)} depth maps, {len(confidences)} confidence maps, {len(cameras)} cameras"
        )
    depths = [np.asarray(d, dtype=np.float64) for d in depths]
    checks = _pair_checks(depths, cameras, params)
    out, stats = [], []
    for i, d in enumerate(depths):
        votes = np.zeros(d.shape, dtype=np.int64)
        for j in range(len(depths)):
            if j != i:
                votes += checks[(i, j)].ok
        keep = (np.asarray(confidences[i]) >= params.photo_threshold) & (votes >= params.min_views) & (d > 0)
        out.append(np.where(keep, d, 0.0))
        stats.append((int(keep.sum()), d.size))
    return out, stats, checks


def fuse_to_cloud(filtered, cameras, images, params: FusionParams = FusionParams(), checks=None) -> PointCloud:
    """Lift surviving pixels to world space, averaging with agreeing views' points.

    Contributions are summed in sorted order per coordinate so the result does
    not depend on the order in which views are visited. A merged point that no
    longer reprojects within ``geo_pixel_tol`` of its pixel falls back to the
    unmerged point.
    """
    filtered = [np.asarray(d, dtype=np.float64) for d in filtered]
    if checks is None:
        checks = _pair_checks(filtered, cameras, params)
    pts_all, cols_all = [], []
    for i, d in enumerate(filtered):
        keep = d > 0
        if not keep.any():
            continue
        cam = cameras[i]
        P = rays(cam, d.shape)[keep] * d[keep][:, None]
        own = camera_to_world(cam, P)
        stack = [own]
        for j in range(len(filtered)):
            if j == i:
                continue
            c = checks[(i, j)]
            stack.append(np.where(c.ok[keep][:, None], c.world[keep], np.nan))
        S = np.sort(np.stack(stack), axis=0)  # NaNs sort last
        count = np.isfinite(S[..., 0]).sum(axis=0)
        merged = np.nansum(S, axis=0) / count[:, None]
        ys, xs = np.nonzero(keep)
        uv = (merged @ cam.R.T + cam.t) @ cam.K.T
        reproj_err = np.hypot(uv[:, 0] / uv[:, 2] - xs, uv[:, 1] / uv[:, 2] - ys)
        merged = np.where((reproj_err < params.geo_pixel_tol)[:, None], merged, own)
        img = as_channels(images[i])
        col = img[keep]
        if col.shape[1] == 1:
            col = np.repeat(col, 3, axis=1)
        pts_all.append(merged)
        cols_all.append(np.clip(col[:, :3], 0, 1))
    if not pts_all:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    return PointCloud(np.concatenate(pts_all), np.concatenate(cols_all))
