import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_camera, random_rotation
from mvsopt import geometry
from mvsopt.geometry import Pose, backproject, bilinear_sample, project, reproject
from mvsopt.scene_io import Camera

I3 = np.eye(3)


def cam(K=I3, R=I3, t=(0, 0, 0)):
    return Camera(K, R, t)


# ---------------------------------------------------------------- projection


def test_backproject_identity():
    np.testing.assert_array_equal(backproject(cam(), [0, 0], 5.0), [0, 0, 5])


def test_backproject_hand_inverse():
    # K^-1 (1, 1, 1) = ((1 - 1) / 2, (1 - 1) / 2, 1) = (0, 0, 1)
    K = [[2, 0, 1], [0, 2, 1], [0, 0, 1]]
    np.testing.assert_allclose(backproject(cam(K), [1, 1], 4.0), [0, 0, 4], atol=1e-15)


def test_backproject_rejects_nonpositive():
    with pytest.raises(ValueError):
        backproject(cam(), [0, 0], 0.0)


def test_reproject_translation_by_hand():
    # P = 4 (2, 3, 1) = (8, 12, 4); shifted by (0, 0, -1) -> (8, 12, 3); pixel (8/3, 4)
    pix, z, ok = reproject(cam(), cam(t=(0, 0, -1)), [2, 3], 4.0)
    np.testing.assert_allclose(pix, [8 / 3, 4], rtol=1e-15)
    assert z == 3.0 and ok


def test_reproject_behind_camera_flagged():
    _, z, ok = reproject(cam(), cam(t=(0, 0, -4)), [2, 3], 4.0)
    assert z == 0.0 and not ok
    _, _, ok = reproject(cam(), cam(t=(0, 0, -10)), [2, 3], 4.0)
    assert not ok


def test_reproject_identity_exact():
    rng = np.random.default_rng(0)
    c = random_camera(rng)
    pix = rng.uniform(0, 63, (200, 2))
    depth = rng.uniform(0.1, 1e4, 200)
    out, z, ok = reproject(c, c, pix, depth)
    np.testing.assert_array_equal(out, pix)
    np.testing.assert_array_equal(z, depth)
    assert ok.all()


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), x=st.floats(0, 63), y=st.floats(0, 63),
       depth=st.floats(1e-2, 1e5))
def test_project_backproject_round_trip(seed, x, y, depth):
    c = random_camera(np.random.default_rng(seed))
    pix, _ = project(c, backproject(c, [x, y], depth))
    np.testing.assert_allclose(pix, [x, y], rtol=0, atol=1e-9)


def test_pose_inverse_composes_to_identity():
    rng = np.random.default_rng(1)
    p = Pose(random_rotation(rng), rng.normal(size=3))
    e = p.compose(p.inverse())
    np.testing.assert_allclose(e.R, I3, atol=1e-12)
    np.testing.assert_allclose(e.t, 0, atol=1e-12)


def test_relative_pose_matches_world_route():
    rng = np.random.default_rng(2)
    a, b = random_camera(rng), random_camera(rng)
    X = rng.normal(size=(10, 3))
    in_a = geometry.world_to_camera(a, X)
    np.testing.assert_allclose(geometry.relative_pose(a, b).apply(in_a),
                               geometry.world_to_camera(b, X), atol=1e-9)


# ---------------------------------------------------------------- bilinear sampling


def grid():
    return np.arange(30, dtype=np.float64).reshape(5, 6)


def test_bilinear_integer():
    v, ok = bilinear_sample(grid(), [3, 2])
    assert v[0] == grid()[2, 3] and ok


def test_bilinear_half_pixel():
    g = np.array([[10.0, 20.0], [0.0, 0.0]])
    v, ok = bilinear_sample(g, [0.5, 0])
    assert v[0] == 15.0 and ok


@pytest.mark.parametrize("p", [(-0.01, 3), (5.01, 1), (2, -1e-9), (2, 4.5)])
def test_bilinear_out_of_bounds(p):
    v, ok = bilinear_sample(grid(), list(p))
    assert v[0] == 0.0 and not ok


def test_bilinear_far_edge_valid():
    v, ok = bilinear_sample(grid(), [5, 4])
    assert v[0] == 29.0 and ok


def test_bilinear_derivative_matches_differences():
    rng = np.random.default_rng(4)
    g = rng.normal(size=(9, 11, 2))
    h = 1e-3
    pts = rng.uniform(1, 8, (400, 2))
    # stay away from the integer creases where the one-sided slopes differ
    frac = pts - np.floor(pts)
    pts = pts[((frac > 2 * h) & (frac < 1 - 2 * h)).all(axis=1)]
    dx, dy = geometry.bilinear_sample_grad(g, pts)
    ex = np.array([h, 0])
    ey = np.array([0, h])
    fdx = (bilinear_sample(g, pts + ex)[0] - bilinear_sample(g, pts - ex)[0]) / (2 * h)
    fdy = (bilinear_sample(g, pts + ey)[0] - bilinear_sample(g, pts - ey)[0]) / (2 * h)
    np.testing.assert_allclose(dx, fdx, atol=1e-4)
    np.testing.assert_allclose(dy, fdy, atol=1e-4)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-2, 8), y=st.floats(-2, 7))
def test_mask_soundness(x, y):
    g = np.ones((5, 6))
    v, ok = bilinear_sample(g, [x, y])
    inside = 0 <= x <= 5 and 0 <= y <= 4
    assert bool(ok) == inside
    # a valid sample of an all-ones grid touches only in-grid supports
    assert v[0] == pytest.approx(1.0 if inside else 0.0)


# ---------------------------------------------------------------- warping


def test_warp_identity_exact():
    rng = np.random.default_rng(5)
    c = random_camera(rng, 12, 10)
    src = rng.uniform(size=(10, 12, 3))
    depth = rng.uniform(1, 100, (10, 12))
    warped, mask = geometry.warp_image(src, c, c, depth)
    np.testing.assert_array_equal(warped, src)
    assert mask.all()


def test_warp_zero_depth():
    src = np.ones((4, 5))
    warped, mask = geometry.warp_image(src, cam(), cam(t=(1, 0, 0)), np.zeros((4, 5)))
    assert not mask.any() and not warped.any()


def test_warp_dimension_mismatch():
    with pytest.raises(ValueError):
        geometry.warp_image(np.ones((4, 5)), cam(), cam(), np.ones((4, 4)))


def test_homography_matches_constant_depth_warp():
    rng = np.random.default_rng(6)
    K = np.array([[40.0, 0, 15.5], [0, 40.0, 11.5], [0, 0, 1]])
    for _ in range(5):
        R = random_rotation(np.random.default_rng(rng.integers(1 << 30)))
        # small rotations keep the views overlapping
        w = rng.normal(0, 0.05, 3)
        Rs = np.eye(3) + np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        U, _, Vt = np.linalg.svd(Rs)
        Rs = U @ Vt
        a = Camera(K, R, rng.normal(0, 5, 3))
        b = Camera(K, Rs @ R, a.t + rng.normal(0, 5, 3))
        src = rng.uniform(size=(24, 32, 2))
        d = rng.uniform(50, 200)
        h_val, h_mask = geometry.warp_at_hypothesis(src, a, b, d)
        w_val, w_mask = geometry.warp_image(src, a, b, np.full((24, 32), d))
        both = h_mask & w_mask
        assert (h_mask != w_mask).mean() < 0.01
        np.testing.assert_allclose(h_val[both], w_val[both], atol=1e-6)


def test_homography_identity():
    src = np.random.default_rng(7).uniform(size=(6, 7))
    c = cam([[5, 0, 3], [0, 5, 2.5], [0, 0, 1]])
    v, m = geometry.warp_at_hypothesis(src, c, c, 17.0)
    np.testing.assert_array_equal(v[..., 0], src)
    assert m.all()


def test_warp_derivative_matches_differences():
    rng = np.random.default_rng(8)
    K = np.array([[30.0, 0, 9.5], [0, 30.0, 9.5], [0, 0, 1]])
    a = Camera(K, I3, np.zeros(3))
    b = Camera(K, I3, [-20.0, 5.0, 0.0])
    src = rng.uniform(size=(20, 20))
    depth = rng.uniform(300, 400, (20, 20))
    w = geometry.warp_with_derivative(src, a, b, depth)
    h = 1e-3
    up = geometry.warp_image(src, a, b, depth + h)[0]
    dn = geometry.warp_image(src, a, b, depth - h)[0]
    fd = (up - dn) / (2 * h)
    err = np.abs(fd - w.d_dz)[w.mask]
    # rare samples straddle a crease; the rest agree tightly
    assert np.mean(err < 1e-5) > 0.98


def test_plane_warp_reproduces_reference(plane_scene):
    scene, depths = plane_scene
    ref = scene.images[0]
    for j in (1, 2):
        warped, mask = geometry.warp_image(scene.images[j], scene.cameras[0], scene.cameras[j], depths[0])
        inner = mask.copy()
        inner[:2] = inner[-2:] = False
        inner[:, :2] = inner[:, -2:] = False
        assert np.abs(warped[..., 0] - ref)[inner].mean() < 2 / 255
