"""Central finite-difference audit of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import TERMS, LossWeights, evaluate

REL_TOL = 1e-3


@dataclass
class TermAudit:
    term: str
    analytic: np.ndarray  # per sample
    numeric: np.ndarray
    passed: np.ndarray  # bool per sample
    excluded: np.ndarray  # bool per sample (kink within h)

    @property
    def pass_fraction(self) -> float:
        used = ~self.excluded
        return float(self.passed[used].mean()) if used.any() else 1.0


def _term_values(bd):
    return np.array([bd.term(t) for t in TERMS])


def audit_gradients(scene, depth, pyramids, weights: LossWeights = LossWeights(), samples=500,
                    seed=0, h=None, rel_tol=REL_TOL):
    """Compare analytic and central-difference ``dL/dZ`` at randomly drawn pixels.

    Pixels are drawn uniformly with replacement. A sample counts as matching
    when ``|a - f| <= rel_tol * max(|a|, |f|)`` or when the mismatch is below the
    round-off floor of the difference quotient. Samples whose one-sided
    differences disagree beyond the curvature allowance sit within ``h`` of a
    crease or ``|.|`` kink and are excluded.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if h is None:
        h = 1e-3 * scene.cameras[0].depth_interval
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, depth.size, size=samples)
    bd0, grads = evaluate(scene, depth, pyramids, weights, need_grad=True)
    f0 = _term_values(bd0)
    cache = {}
    for idx in np.unique(flat):
        vals = []
        for step in (h, -h, 0.5 * h, -0.5 * h):
            z = depth.copy()
            z.flat[idx] += step
            vals.append(_term_values(evaluate(scene, z, pyramids, weights, need_grad=False)[0]))
        cache[idx] = np.array(vals)
    out = {}
    eps = np.finfo(np.float64).eps
    for k, term in enumerate(TERMS):
        a = grads[term].flat[flat]
        fp = np.array([cache[i][0, k] for i in flat])
        fm = np.array([cache[i][1, k] for i in flat])
        hp = np.array([cache[i][2, k] for i in flat])
        hm = np.array([cache[i][3, k] for i in flat])
        num = (fp - fm) / (2 * h)
        num_half = (hp - hm) / h
        noise = 64 * eps * (abs(f0[k]) + 1e-300) / h
        err = np.abs(a - num)
        scale = np.maximum(np.abs(a), np.abs(num))
        passed = (err <= rel_tol * scale) | (err <= noise)
        # a kink inside [-h, h] makes the h and h/2 quotients disagree at first order
        excluded = np.abs(num - num_half) > np.maximum(0.25 * rel_tol * scale, 4 * noise)
        out[term] = TermAudit(term, a, num, passed, excluded)
    return out
