"""Per-scene depth estimation.

Plane sweep gives the starting depth, then the multi-metric loss is minimised
directly over the depth map with backtracking gradient steps, interleaved
with normal-depth refinement passes. Steps and refinements that raise the
loss are rolled back, so the recorded loss trace never increases.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .cost_volume import build_variance_volume, regularize_volume, soft_argmin
from .features import DEFAULT_SCALES, build_handcrafted_pyramid, handcrafted_features
from .geometry import warp_image
from .losses import LossBreakdown, LossWeights, evaluate
from .normal_depth import NormalMap, normal_from_depth, refine_depth
from .scene_io import Scene
from .synthetic import render_synthetic_scene  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

STALL_WINDOW = 5
STALL_TOL = 1e-5


class DegenerateSceneError(ValueError):
    """The source views do not overlap the reference view."""


@dataclass
class SolverConfig:
    max_iters: int = 200
    step_size: float | None = None  # None: half a depth interval
    step_decay: float = 0.5
    nd_passes: int = 1
    nd_every: int = 25
    temperature: float = 0.02
    alpha1: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)
    feature_scales: tuple = DEFAULT_SCALES
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must lie in (0, 1]")
        if self.nd_every < 1:
            raise ValueError("nd_every must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class SolveReport:
    trace: list  # LossBreakdown per iteration, trace[0] at the initial depth
    depth: np.ndarray
    normals: NormalMap
    confidence: np.ndarray
    initial_depth: np.ndarray
    accepted: int = 0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "photo", "ssim", "smooth", "feature", "total"])
        for i, bd in enumerate(self.trace):
            w.writerow([i] + [repr(float(v)) for v in
                              (bd.photo, bd.ssim, bd.smooth, bd.feature_total, bd.total)])
        return buf.getvalue()


def initial_depth(scene: Scene, temperature: float):
    """Soft-argmin depth and confidence from the smoothed variance volume."""
    feats = [handcrafted_features(img) for img in scene.images]
    try:
        cv = build_variance_volume(feats[0], feats[1:], scene.cameras)
    except ValueError as exc:
        if "overlaps" in str(exc):
            raise DegenerateSceneError(str(exc)) from None
        raise
    depth, _, confidence = soft_argmin(regularize_volume(cv), temperature)
    return depth, confidence


def _check_overlap(scene: Scene, depth):
    for img, cam in zip(scene.images[1:], scene.cameras[1:]):
        if warp_image(img, scene.cameras[0], cam, depth)[1].any():
            return
    raise DegenerateSceneError("no source view overlaps the reference at the initial depth")


def solve_depth(scene: Scene, config: SolverConfig = SolverConfig()) -> SolveReport:
    if len(scene.images) < 2:
        raise ValueError("need at least two views")
    cam = scene.cameras[0]
    lo, hi = cam.depth_min, cam.depth_max
    pyramids = [build_handcrafted_pyramid(img, config.feature_scales) for img in scene.images]
    z0, confidence = initial_depth(scene, config.temperature)
    _check_overlap(scene, z0)

    def loss(z, grad=True):
        return evaluate(scene, z, pyramids, config.weights, need_grad=grad)

    Z = z0
    bd, grads = loss(Z)
    trace: list[LossBreakdown] = [bd]
    step = config.step_size if config.step_size is not None else 0.5 * cam.depth_interval
    accepted = 0
    for it in range(1, config.max_iters + 1):
        G = grads["total"]
        gmax = np.abs(G).max()
        if gmax > 0:
            cand = np.clip(Z - step * G / gmax, lo, hi)
            cbd, cgrads = loss(cand)
            if cbd.total <= bd.total:
                Z, bd, grads = cand, cbd, cgrads
                accepted += 1
            else:
                step *= config.step_decay
        if config.nd_passes > 0 and it % config.nd_every == 0:
            refined = refine_depth(Z, normal_from_depth(Z, cam), cam, scene.images[0],
                                   config.alpha1, config.nd_passes)
            refined = np.clip(refined, lo, hi)
            rbd, rgrads = loss(refined)
            if rbd.total <= bd.total:
                Z, bd, grads = refined, rbd, rgrads
        trace.append(bd)
        if len(trace) > STALL_WINDOW:
            old = trace[-1 - STALL_WINDOW].total
            if abs(old - bd.total) <= STALL_TOL * abs(old):
                log.debug("stopping at iteration %d: loss change below tolerance", it)
                break
        if gmax == 0:
            break
    return SolveReport(trace, Z, normal_from_depth(Z, cam), confidence, z0, accepted)
