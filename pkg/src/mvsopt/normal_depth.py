"""Normals from depth by averaged neighbour cross products, and depth from normals.

Normals are camera-facing (negative z in the camera frame). Depth refinement
lets every valid neighbour propose a depth for the centre pixel by requiring
the segment between them to lie in the neighbour's tangent plane, then blends
the proposals with image-gradient weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_channels, pixel_grid
from .scene_io import Camera

# Ring of neighbours as (dy, dx), turning from +x towards +y. Consecutive
# entries form the (x-direction, y-direction) pairs of the cross products.
RING = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))

DENOM_EPS = 1e-9
WEIGHT_FLOOR = 1e-12


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3), unit where valid, zero elsewhere
    valid: np.ndarray  # (H, W) bool


def _shift(a, dy, dx, fill=0.0):
    """``out[y, x] = a[y + dy, x + dx]`` with ``fill`` outside."""
    H, W = a.shape[:2]
    out = np.full_like(a, fill)
    ys = slice(max(0, -dy), min(H, H - dy))
    xs = slice(max(0, -dx), min(W, W - dx))
    ys_src = slice(max(0, dy), min(H, H + dy))
    xs_src = slice(max(0, dx), min(W, W + dx))
    out[ys, xs] = a[ys_src, xs_src]
    return out


def rays(camera: Camera, shape):
    """``K^-1 (x, y, 1)`` for every pixel, shape (H, W, 3)."""
    xs, ys = pixel_grid(*shape)
    hom = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
    return hom @ camera.K_inv.T


def normal_from_depth(depth, camera: Camera) -> NormalMap:
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    P = rays(camera, (H, W)) * depth[..., None]
    support = depth > 0
    for dy, dx in RING:
        support &= _shift(depth, dy, dx) > 0
    support[[0, -1], :] = False
    support[:, [0, -1]] = False

    acc = np.zeros((H, W, 3))
    for k in range(8):
        a = RING[k]
        b = RING[(k + 1) % 8]
        va = _shift(P, *a) - P
        vb = _shift(P, *b) - P
        n = np.cross(va, vb)
        flip = n[..., 2] > 0
        n[flip] *= -1
        acc += n
    acc /= 8.0
    norm = np.linalg.norm(acc, axis=-1)
    valid = support & (norm > 0)
    normals = np.where(valid[..., None], acc / np.where(valid, norm, 1.0)[..., None], 0.0)
    return NormalMap(normals, valid)


def direction_gradients(ref_image):
    """``|I(neighbour) - I(centre)|`` summed over channels, per ring direction.

    Shape (8, H, W); directions leaving the image are ``inf``.
    """
    img = as_channels(ref_image)
    grads = []
    for dy, dx in RING:
        nb = _shift(img, dy, dx, fill=np.nan)
        grads.append(np.abs(nb - img).sum(axis=-1))
    return np.nan_to_num(np.stack(grads), nan=np.inf)


def normalized_weights(grads, ok, alpha1: float):
    """``exp(-alpha1 * grad)`` over the valid directions, normalised to sum to 1.

    The per-pixel minimum gradient is subtracted first so large ``alpha1``
    cannot underflow every weight; it cancels in the normalisation.
    """
    g = np.where(ok, grads, np.inf)
    gmin = g.min(axis=0)
    gmin = np.where(np.isfinite(gmin), gmin, 0.0)
    w = np.where(ok, np.exp(-alpha1 * (g - gmin)), 0.0)
    return w / np.maximum(w.sum(axis=0), WEIGHT_FLOOR)


def depth_proposals(depth, normals: NormalMap, camera: Camera):
    """Depth each neighbour proposes for the centre pixel; (8, H, W) plus validity."""
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    r = rays(camera, (H, W))
    props = np.zeros((8, H, W))
    ok = np.zeros((8, H, W), dtype=bool)
    for k, (dy, dx) in enumerate(RING):
        z_nb = _shift(depth, dy, dx)
        n_nb = _shift(normals.normals, dy, dx)
        v_nb = _shift(normals.valid, dy, dx, fill=False)
        r_nb = _shift(r, dy, dx)
        num = z_nb * np.einsum("hwc,hwc->hw", r_nb, n_nb)
        den = np.einsum("hwc,hwc->hw", r, n_nb)
        good = v_nb & (z_nb > 0) & (np.abs(den) >= DENOM_EPS)
        props[k] = np.where(good, num / np.where(good, den, 1.0), 0.0)
        ok[k] = good
    return props, ok


def refine_depth(depth, normals: NormalMap, camera: Camera, ref_image, alpha1: float = 0.1, passes: int = 1):
    """Blend neighbour depth proposals with image-edge-aware weights.

    Pixels without a valid proposal, and invalid (zero) depths, are left as is.
    With ``passes > 1`` the normals are recomputed from the refined depth between passes.
    """
    if alpha1 <= 0:
        raise ValueError("alpha1 must be positive")
    out = np.asarray(depth, dtype=np.float64)
    grads = direction_gradients(ref_image)
    for p in range(passes):
        if p > 0:
            normals = normal_from_depth(out, camera)
        props, ok = depth_proposals(out, normals, camera)
        wn = normalized_weights(grads, ok, alpha1)
        has = ok.any(axis=0) & (out > 0)
        out = np.where(has, (wn * props).sum(axis=0), out)
    return out
