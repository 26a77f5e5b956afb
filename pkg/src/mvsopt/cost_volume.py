"""Variance-based plane-sweep cost volume, fixed smoothing and soft-argmin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import as_channels, warp_at_hypothesis
from .scene_io import Camera

# 1-2-1 binomial taps; applied along depth, rows and columns.
SMOOTH_KERNEL = np.array([0.25, 0.5, 0.25])


@dataclass
class CostVolume:
    depth_hypotheses: np.ndarray  # (D,)
    data: np.ndarray  # (D, H, W), lower is better


def build_variance_volume(ref_feat, src_feats, cameras: list[Camera]) -> CostVolume:
    """Across-view feature variance at each sweep plane of ``cameras[0]``.

    ``cameras[0]`` is the reference, ``cameras[1:]`` pair with ``src_feats``.
    """
    if not src_feats:
        raise ValueError("need at least one source view")
    if len(cameras) != len(src_feats) + 1:
        raise ValueError(f"{len(cameras)} cameras for {len(src_feats) + 1} views")
    ref = as_channels(ref_feat)
    srcs = [as_channels(f) for f in src_feats]
    for f in srcs:
        if f.shape[2] != ref.shape[2]:
            raise ValueError(f"channel mismatch: reference {ref.shape[2]}, source {f.shape[2]}")
    cam_ref = cameras[0]
    hyps = cam_ref.hypotheses
    H, W, _ = ref.shape
    data = np.empty((len(hyps), H, W))
    no_source = np.zeros((len(hyps), H, W), dtype=bool)
    for k, d in enumerate(hyps):
        # moments of the deviation from the reference: exact zero for identical views
        dev = np.zeros_like(ref)
        dev_sq = np.zeros_like(ref)
        count = np.ones((H, W))
        for feat, cam in zip(srcs, cameras[1:]):
            warped, mask = warp_at_hypothesis(feat, cam_ref, cam, d, out_shape=(H, W))
            e = np.where(mask[..., None], warped - ref, 0.0)
            dev += e
            dev_sq += e * e
            count += mask
        mean = dev / count[..., None]
        var = dev_sq / count[..., None] - mean * mean
        data[k] = np.maximum(var, 0.0).mean(axis=2)
        no_source[k] = count == 1
    if no_source.all():
        raise ValueError("no source view overlaps the reference at any hypothesis")
    data[no_source] = data[~no_source].max()
    return CostVolume(hyps, data)


def regularize_volume(cv: CostVolume) -> CostVolume:
    """Separable 3x3x3 binomial smoothing with edge replication."""
    out = cv.data
    for axis in range(3):
        out = ndimage.correlate1d(out, SMOOTH_KERNEL, axis=axis, mode="nearest")
    return CostVolume(cv.depth_hypotheses, np.maximum(out, 0.0))


def softmax_columns(cost, temperature):
    logits = -np.asarray(cost, dtype=np.float64) / temperature
    logits = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def soft_argmin(cv: CostVolume, temperature: float = 1.0):
    """Expected depth under ``softmax(-cost / temperature)`` along the depth axis.

    Returns ``(depth (H, W), prob (D, H, W), confidence (H, W))`` where confidence
    is the probability mass of the four hypotheses nearest the regressed depth.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    hyps = np.asarray(cv.depth_hypotheses, dtype=np.float64)
    prob = softmax_columns(cv.data, temperature)
    depth = np.einsum("k,khw->hw", hyps, prob)
    D = len(hyps)
    if D <= 4:
        return depth, prob, prob.sum(axis=0)
    step = hyps[1] - hyps[0]
    idx = np.floor((depth - hyps[0]) / step).astype(np.intp)
    start = np.clip(idx - 1, 0, D - 4)
    ks = np.arange(D)[:, None, None]
    window = (ks >= start) & (ks < start + 4)
    confidence = np.where(window, prob, 0.0).sum(axis=0)
    return depth, prob, confidence
