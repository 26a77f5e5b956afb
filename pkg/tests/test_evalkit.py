import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsopt.evalkit import (
    brute_force_distances, cloud_metrics, depth_metrics, nearest_distances, voxel_downsample,
)
from mvsopt.scene_io import PointCloud


def brute_metrics(rec, ref, max_dist):
    """O(N^2) scan with the same distance formula."""
    d_rec = np.array([min(np.sqrt(((p - q) ** 2).sum()) for q in ref) for p in rec])
    d_ref = np.array([min(np.sqrt(((p - q) ** 2).sum()) for q in rec) for p in ref])
    acc = np.minimum(d_rec, max_dist).mean()
    comp = np.minimum(d_ref, max_dist).mean()
    return acc, comp, (acc + comp) / 2


def test_identical_clouds():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    assert cloud_metrics(PointCloud(pts), PointCloud(pts)) == (0.0, 0.0, 0.0)


def test_single_pair():
    assert cloud_metrics(PointCloud([[1, 0, 0]]), PointCloud([[0, 0, 0]])) == (1.0, 1.0, 1.0)


def test_random_500_exact():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 30, (500, 3))
    b = rng.uniform(0, 30, (500, 3))
    assert cloud_metrics(PointCloud(a), PointCloud(b), 20.0) == brute_metrics(a, b, 20.0)


def test_grid_ties_exact():
    # integer lattices produce many equidistant candidates
    g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3), -1).reshape(-1, 3)
    q = g[::7] + 0.5
    np.testing.assert_array_equal(nearest_distances(q, g), brute_force_distances(q, g))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 300), m=st.integers(1, 300),
       spread=st.floats(0.01, 100))
def test_index_equals_brute_force(seed, n, m, spread):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, spread, (n, 3))
    b = rng.normal(0, spread, (m, 3))
    np.testing.assert_array_equal(nearest_distances(a, b), brute_force_distances(a, b))


def test_symmetry_and_clamp():
    rng = np.random.default_rng(2)
    a = PointCloud(rng.normal(0, 40, (200, 3)))
    b = PointCloud(rng.normal(5, 40, (150, 3)))
    ab = cloud_metrics(a, b, 3.0)
    ba = cloud_metrics(b, a, 3.0)
    assert ab[0] == ba[1] and ab[1] == ba[0]
    assert ab[2] <= 3.0


def test_metrics_errors():
    with pytest.raises(ValueError):
        cloud_metrics(PointCloud(np.zeros((0, 3))), PointCloud([[0, 0, 0]]))
    with pytest.raises(ValueError):
        cloud_metrics(PointCloud([[0, 0, 0]]), PointCloud([[0, 0, 0]]), max_dist=0)


def test_voxel_downsample_keeps_first():
    pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [1.5, 0, 0]])
    out = voxel_downsample(PointCloud(pts), 1.0)
    np.testing.assert_array_equal(out.points, pts[[0, 2]])


# ---------------------------------------------------------------- depth metrics


def test_depth_exact():
    gt = np.random.default_rng(3).uniform(400, 900, (10, 10))
    assert depth_metrics(gt, gt) == [100.0, 100.0, 100.0]


def test_depth_uniform_offset():
    gt = np.full((8, 8), 500.0)
    assert depth_metrics(gt + 3, gt, [2, 4, 8]) == [0.0, 100.0, 100.0]


def test_depth_half_offset():
    gt = np.full((8, 8), 500.0)
    est = gt.copy()
    est[:4] += 5
    assert depth_metrics(est, gt, [2, 4, 8]) == [50.0, 50.0, 100.0]


def test_depth_ignores_invalid():
    gt = np.full((4, 4), 500.0)
    est = gt + 1
    est[0] = 0.0
    gt[1] = 0.0
    est[2] += 10
    # 8 jointly valid pixels, 4 of them off by 11
    assert depth_metrics(est, gt, [2, 4, 16]) == [50.0, 50.0, 100.0]


def test_depth_errors():
    with pytest.raises(ValueError):
        depth_metrics(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        depth_metrics(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        depth_metrics(np.ones((2, 2)), np.ones((2, 2)), [4, 2])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_depth_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1, 10, (6, 6))
    est = gt + rng.normal(0, 3, gt.shape)
    pct = depth_metrics(est, gt, [0.5, 1, 2, 4, 8])
    assert pct == sorted(pct)
