"""Multi-metric reconstruction loss over a per-pixel reference depth map.

The objective combines a pixel-wise part (L1 photometric + gradient, SSIM,
edge-aware first/second-order depth smoothness) with a feature-wise part
(L1 between reference and warped source feature maps at several scales):

    pixel   = lambda1 * photo + lambda2 * ssim + lambda3 * smooth
    feature = sum_s beta_s * feat_s
    total   = gamma1 * pixel + gamma2 * feature

Photometric, SSIM and feature terms are averaged over the source views.
Every term also has an analytic derivative with respect to the depth map.
Since a warped pixel depends only on its own reference depth, each term
only needs ``dL/dwarped`` which is then multiplied by ``dwarped/dZ``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .features import DEFAULT_SCALES, FeaturePyramid, build_handcrafted_pyramid
from .geometry import as_channels, warp_with_derivative
from .scene_io import Scene

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

TERMS = ("photo", "ssim", "smooth", "feature", "total")


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 1.0
    gamma2: float = 1.0
    lambda1: float = 0.8
    lambda2: float = 0.2
    lambda3: float = 0.067
    beta1: float = 0.2  # 1/2 scale
    beta2: float = 0.8  # 1/4 scale
    beta3: float = 0.4  # 1/8 scale
    beta4: float = 0.0  # 1/16 scale, off by default
    alpha2: float = 0.5
    alpha3: float = 0.5

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")
        if self.gamma1 == 0 and self.gamma2 == 0:
            raise ValueError("at least one of gamma1, gamma2 must be positive")

    def beta(self, scale: float) -> float:
        k = round(-math.log2(scale))
        return {1: self.beta1, 2: self.beta2, 3: self.beta3, 4: self.beta4}[k]


class TermValue(NamedTuple):
    value: float
    count: int

    @property
    def degenerate(self) -> bool:
        return self.count == 0


def scale_key(scale: float) -> str:
    return f"feat_1_{round(1 / scale)}"


@dataclass
class LossBreakdown:
    photo: float
    ssim: float
    smooth: float
    pixel_total: float
    feature_per_scale: dict
    feature_total: float
    total: float
    m: int
    n: int
    degenerate: tuple = ()

    def report(self) -> dict:
        out = {"photo": self.photo, "ssim": self.ssim, "smooth": self.smooth, "pixel": self.pixel_total}
        for s, v in self.feature_per_scale.items():
            out[scale_key(s)] = v
        out.update(feature=self.feature_total, total=self.total, m=self.m, n=self.n)
        return out

    def term(self, name: str) -> float:
        return {"photo": self.photo, "ssim": self.ssim, "smooth": self.smooth,
                "feature": self.feature_total, "total": self.total}[name]


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Pixel-wise terms. Each private helper returns (value, dL/dwarped, count).
# ---------------------------------------------------------------------------


def _photometric(ref, warped, mask):
    M = mask.astype(np.float64)[..., None]
    m = int(mask.sum())
    grad = np.zeros_like(warped)
    if m == 0:
        return 0.0, grad, 0
    e = ref - warped
    total = np.abs(e * M).sum()
    grad -= np.sign(e) * M
    # forward-difference gradients, counted where both pixels of the pair are valid
    for axis in (0, 1):
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        pair = (mask[lo] & mask[hi]).astype(np.float64)[..., None]
        eg = (ref[hi] - ref[lo]) - (warped[hi] - warped[lo])
        total += np.abs(eg * pair).sum()
        sg = np.sign(eg) * pair
        grad[hi] -= sg
        grad[lo] += sg
    return total / m, grad / m, m


def _box3(a):
    """Sum over 3x3 windows centred at interior pixels; result is (H-2, W-2, ...)."""
    H, W = a.shape[:2]
    out = np.zeros((H - 2, W - 2) + a.shape[2:])
    for dy in range(3):
        for dx in range(3):
            out += a[dy:dy + H - 2, dx:dx + W - 2]
    return out


def _box3_scatter(a, shape):
    """Adjoint of :func:`_box3`: spread interior-centre values back over their windows."""
    H, W = shape[:2]
    out = np.zeros(shape)
    for dy in range(3):
        for dx in range(3):
            out[dy:dy + H - 2, dx:dx + W - 2] += a
    return out


def _ssim(ref, warped, mask):
    H, W, C = ref.shape
    grad = np.zeros_like(warped)
    if H < 3 or W < 3:
        return 0.0, grad, 0
    centre_ok = _box3(mask.astype(np.float64)) == 9
    m = int(centre_ok.sum())
    if m == 0:
        return 0.0, grad, 0
    x, y = ref, warped
    mx = _box3(x) / 9
    my = _box3(y) / 9
    sxx = _box3(x * x) / 9 - mx * mx
    syy = _box3(y * y) / 9 - my * my
    sxy = _box3(x * y) / 9 - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    S = a1 * a2 / (b1 * b2)
    valid = centre_ok[..., None]
    per_pixel = (1 - S.mean(axis=2)) / 2
    value = per_pixel[centre_ok].sum() / m

    dL_dS = np.where(valid, -0.5 / (C * m), 0.0)
    dS_dmy = 2 * mx * a2 / (b1 * b2) - S * 2 * my / b1
    dS_dsyy = -S / b2
    dS_dsxy = 2 * a1 / (b1 * b2)
    a = dL_dS * dS_dmy
    b = dL_dS * dS_dsyy
    c = dL_dS * dS_dsxy
    # d my/dy_p = 1/9, d syy/dy_p = 2 (y_p - my)/9, d sxy/dy_p = (x_p - mx)/9
    grad = (
        _box3_scatter(a, y.shape)
        + 2 * y * _box3_scatter(b, y.shape)
        - 2 * _box3_scatter(b * my, y.shape)
        + x * _box3_scatter(c, y.shape)
        - _box3_scatter(c * mx, y.shape)
    ) / 9
    return value, grad, m


def photometric_loss(ref, warped, mask) -> TermValue:
    """Mean over valid pixels of ``|ref - warped| + |grad ref - grad warped|``."""
    ref, warped = as_channels(ref), as_channels(warped)
    _check_same(ref, warped)
    value, _, m = _photometric(ref, warped, np.asarray(mask, dtype=bool))
    return TermValue(value, m)


def ssim_loss(ref, warped, mask) -> TermValue:
    """Mean of ``(1 - SSIM) / 2`` over 3x3 windows lying fully inside the mask."""
    ref, warped = as_channels(ref), as_channels(warped)
    _check_same(ref, warped)
    value, _, m = _ssim(ref, warped, np.asarray(mask, dtype=bool))
    return TermValue(value, m)


# ---------------------------------------------------------------------------
# Smoothness
# ---------------------------------------------------------------------------


def _forward_diff(a, axis):
    """Forward difference; the last row/column repeats its neighbour's difference."""
    d = np.zeros_like(a)
    n = a.shape[axis]
    if n < 2:
        return d
    body = np.diff(a, axis=axis)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(None, -1)
    d[tuple(idx)] = body
    idx[axis] = slice(-1, None)
    last = [slice(None)] * a.ndim
    last[axis] = slice(-1, None)
    d[tuple(idx)] = body[tuple(last)]
    return d


def _forward_diff_adjoint(g, axis):
    out = np.zeros_like(g)
    n = g.shape[axis]
    if n < 2:
        return out
    g = np.moveaxis(g, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:] += g[:-1]
    o[:-1] -= g[:-1]
    o[-1] += g[-1]
    o[-2] -= g[-1]
    return out


def _laplacian(a):
    """5-point Laplacian on interior pixels, zero on the border."""
    out = np.zeros_like(a)
    if a.shape[0] < 3 or a.shape[1] < 3:
        return out
    out[1:-1, 1:-1] = (
        a[:-2, 1:-1] + a[2:, 1:-1] + a[1:-1, :-2] + a[1:-1, 2:] - 4 * a[1:-1, 1:-1]
    )
    return out


def _laplacian_adjoint(g):
    out = np.zeros_like(g)
    if g.shape[0] < 3 or g.shape[1] < 3:
        return out
    c = g[1:-1, 1:-1]
    out[1:-1, 1:-1] -= 4 * c
    out[:-2, 1:-1] += c
    out[2:, 1:-1] += c
    out[1:-1, :-2] += c
    out[1:-1, 2:] += c
    return out


def smoothness_weights(ref, alpha2, alpha3):
    img = as_channels(ref)
    wx = np.exp(-alpha2 * np.abs(_forward_diff(img, 1)).sum(axis=2))
    wy = np.exp(-alpha2 * np.abs(_forward_diff(img, 0)).sum(axis=2))
    lap = np.stack([_laplacian(img[..., c]) for c in range(img.shape[2])], axis=-1)
    w2 = np.exp(-alpha3 * np.abs(lap).sum(axis=2))
    return wx, wy, w2


def _smoothness(depth, ref, alpha2, alpha3):
    Z = np.asarray(depth, dtype=np.float64)
    n = Z.size
    wx, wy, w2 = smoothness_weights(ref, alpha2, alpha3)
    dx = _forward_diff(Z, 1)
    dy = _forward_diff(Z, 0)
    lz = _laplacian(Z)
    value = (wx * np.abs(dx) + wy * np.abs(dy) + w2 * np.abs(lz)).sum() / n
    grad = (
        _forward_diff_adjoint(wx * np.sign(dx), 1)
        + _forward_diff_adjoint(wy * np.sign(dy), 0)
        + _laplacian_adjoint(w2 * np.sign(lz))
    ) / n
    return value, grad


def smoothness_loss(depth, ref, alpha2=0.5, alpha3=0.5) -> float:
    """Edge-aware first- and second-order depth smoothness, averaged over all pixels."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != as_channels(ref).shape[:2]:
        raise ValueError(f"depth {depth.shape} and image {as_channels(ref).shape[:2]} differ")
    return _smoothness(depth, ref, alpha2, alpha3)[0]


# ---------------------------------------------------------------------------
# Feature-wise term
# ---------------------------------------------------------------------------


def block_average(depth):
    """Average valid (non-zero) depths over 2x2 blocks; empty blocks become 0.

    Returns ``(coarse, counts)``; odd sizes give partial trailing blocks.
    """
    Z = np.asarray(depth, dtype=np.float64)
    H, W = Z.shape
    Hc, Wc = -(-H // 2), -(-W // 2)
    padded = np.zeros((2 * Hc, 2 * Wc))
    padded[:H, :W] = Z
    valid = (padded > 0).astype(np.float64)
    blocks = padded.reshape(Hc, 2, Wc, 2)
    counts = valid.reshape(Hc, 2, Wc, 2).sum(axis=(1, 3))
    sums = (blocks * valid.reshape(Hc, 2, Wc, 2)).sum(axis=(1, 3))
    coarse = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return coarse, counts


def block_average_adjoint(g_coarse, fine_depth, counts):
    H, W = fine_depth.shape
    share = np.where(counts > 0, g_coarse / np.maximum(counts, 1), 0.0)
    up = np.repeat(np.repeat(share, 2, axis=0), 2, axis=1)[:H, :W]
    return np.where(fine_depth > 0, up, 0.0)


def _depth_chain(depth, octaves):
    chain = [np.asarray(depth, dtype=np.float64)]
    counts = []
    for _ in range(octaves):
        coarse, c = block_average(chain[-1])
        chain.append(coarse)
        counts.append(c)
    return chain, counts


def _feature_terms(ref_pyr: FeaturePyramid, src_pyrs, cameras, depth, need_grad):
    """Per-scale feature losses, each averaged over source views.

    Returns ``{scale: (value, grad wrt full depth or None, degenerate)}``.
    """
    for p in src_pyrs:
        if [round(s, 9) for s in p.scales] != [round(s, 9) for s in ref_pyr.scales]:
            raise ValueError(f"pyramid scale sets differ: {ref_pyr.scales} vs {p.scales}")
    depth = np.asarray(depth, dtype=np.float64)
    max_oct = max(round(-math.log2(s)) for s in ref_pyr.scales)
    chain, counts = _depth_chain(depth, max_oct)
    out = {}
    nsrc = len(src_pyrs)
    for s, F_ref in ref_pyr.levels:
        k = round(-math.log2(s))
        Zs = chain[k]
        F_ref = as_channels(F_ref)
        if F_ref.shape[:2] != Zs.shape:
            raise ValueError(f"feature level {s} is {F_ref.shape[:2]}, depth is {Zs.shape}")
        C = F_ref.shape[2]
        cam_ref = cameras[0].scaled(s)
        value = 0.0
        g = np.zeros_like(Zs) if need_grad else None
        degenerate = True
        for pyr, cam in zip(src_pyrs, cameras[1:]):
            wp = warp_with_derivative(pyr.level(s), cam_ref, cam.scaled(s), Zs, need_grad)
            m = int(wp.mask.sum())
            if m == 0:
                continue
            degenerate = False
            M = wp.mask[..., None]
            e = F_ref - wp.warped
            value += np.abs(np.where(M, e, 0.0)).sum() / (C * m) / nsrc
            if need_grad:
                dw = np.where(M, -np.sign(e), 0.0) / (C * m) / nsrc
                g += (dw * wp.d_dz).sum(axis=2)
        if need_grad:
            for j in range(k, 0, -1):
                g = block_average_adjoint(g, chain[j - 1], counts[j - 1])
        out[s] = (value, g, degenerate)
    return out


def feature_loss(ref_pyr: FeaturePyramid, src_pyrs, cameras, depth, weights: LossWeights):
    """Weighted multi-scale feature loss; returns ``(total, {scale: value})``."""
    terms = _feature_terms(ref_pyr, src_pyrs, cameras, depth, need_grad=False)
    per_scale = {s: v for s, (v, _, _) in terms.items()}
    total = sum(weights.beta(s) * v for s, v in per_scale.items())
    return total, per_scale


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def default_pyramids(scene: Scene, scales=DEFAULT_SCALES):
    return [build_handcrafted_pyramid(img, scales) for img in scene.images]


def evaluate(scene: Scene, depth, pyramids=None, weights: LossWeights = LossWeights(), need_grad=True):
    """Loss breakdown and, if requested, per-term gradients ``{term: (H, W)}``."""
    if len(scene.images) < 2:
        raise ValueError("need a reference and at least one source view")
    depth = np.asarray(depth, dtype=np.float64)
    ref = as_channels(scene.images[0])
    if depth.shape != ref.shape[:2]:
        raise ValueError(f"depth {depth.shape} does not match reference image {ref.shape[:2]}")
    if pyramids is None:
        pyramids = default_pyramids(scene)
    cam_ref = scene.cameras[0]
    nsrc = len(scene.images) - 1
    photo = ssim = 0.0
    g_photo = np.zeros_like(depth)
    g_ssim = np.zeros_like(depth)
    m_total = 0
    degenerate = []
    for img, cam in zip(scene.images[1:], scene.cameras[1:]):
        wp = warp_with_derivative(img, cam_ref, cam, depth, need_grad)
        p_val, p_dw, m = _photometric(ref, wp.warped, wp.mask)
        s_val, s_dw, _ = _ssim(ref, wp.warped, wp.mask)
        photo += p_val / nsrc
        ssim += s_val / nsrc
        m_total += m
        if need_grad:
            g_photo += (p_dw * wp.d_dz).sum(axis=2) / nsrc
            g_ssim += (s_dw * wp.d_dz).sum(axis=2) / nsrc
    if m_total == 0:
        degenerate += ["photo", "ssim"]
    smooth, g_smooth = _smoothness(depth, ref, weights.alpha2, weights.alpha3)

    fterms = _feature_terms(pyramids[0], pyramids[1:], scene.cameras, depth, need_grad)
    per_scale = {}
    feature = 0.0
    g_feat = np.zeros_like(depth)
    for s, (v, g, degen) in fterms.items():
        per_scale[s] = v
        feature += weights.beta(s) * v
        if need_grad:
            g_feat += weights.beta(s) * g
        if degen:
            degenerate.append(scale_key(s))

    w = weights
    pixel = w.lambda1 * photo + w.lambda2 * ssim + w.lambda3 * smooth
    total = w.gamma1 * pixel + w.gamma2 * feature
    bd = LossBreakdown(photo, ssim, smooth, pixel, per_scale, feature, total,
                       m_total, depth.size, tuple(degenerate))
    grads = None
    if need_grad:
        g_pixel = w.lambda1 * g_photo + w.lambda2 * g_ssim + w.lambda3 * g_smooth
        grads = {
            "photo": g_photo,
            "ssim": g_ssim,
            "smooth": g_smooth,
            "feature": g_feat,
            "total": w.gamma1 * g_pixel + w.gamma2 * g_feat,
        }
    return bd, grads


def total_loss(scene: Scene, depth, pyramids=None, weights: LossWeights = LossWeights()) -> LossBreakdown:
    return evaluate(scene, depth, pyramids, weights, need_grad=False)[0]


def loss_gradient(scene: Scene, depth, pyramids=None, weights: LossWeights = LossWeights(), term="total"):
    """Analytic ``d(term)/dZ`` per pixel; ``term`` is one of photo/ssim/smooth/feature/total."""
    if term not in TERMS:
        raise ValueError(f"unknown loss term {term!r}")
    return evaluate(scene, depth, pyramids, weights, need_grad=True)[1][term]
