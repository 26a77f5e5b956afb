import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsopt.cost_volume import (
    SMOOTH_KERNEL, CostVolume, build_variance_volume, regularize_volume, soft_argmin,
)
from mvsopt.features import handcrafted_features
from mvsopt.geometry import warp_image
from mvsopt.scene_io import Camera
from mvsopt.synthetic import SceneSpec, render_synthetic_scene


def cam(t=(0, 0, 0), D=8):
    K = [[20.0, 0, 7.5], [0, 20.0, 5.5], [0, 0, 1]]
    return Camera(K, np.eye(3), t, 100.0, 5.0, D)


def cv_from(data, dmin=100.0, step=5.0):
    data = np.asarray(data, dtype=np.float64)
    return CostVolume(dmin + step * np.arange(data.shape[0]), data)


# ---------------------------------------------------------------- construction


def test_identical_views_zero_cost():
    f = np.random.default_rng(0).normal(size=(12, 16, 4))
    cv = build_variance_volume(f, [f, f], [cam(), cam(), cam()])
    assert cv.data.shape == (8, 12, 16)
    assert not cv.data.any()
    np.testing.assert_array_equal(cv.depth_hypotheses, 100 + 5 * np.arange(8))


def test_variance_by_hand():
    # identity pose: the variance of {a, b} per channel is ((a - b) / 2)^2
    rng = np.random.default_rng(1)
    a = rng.normal(size=(12, 16, 3))
    b = rng.normal(size=(12, 16, 3))
    cv = build_variance_volume(a, [b], [cam(), cam()])
    want = (((a - b) / 2) ** 2).mean(axis=2)
    for k in range(8):
        np.testing.assert_allclose(cv.data[k], want, atol=1e-12)


def test_no_source_pixel_gets_volume_max():
    # source camera shifted far sideways: only part of the reference is covered
    rng = np.random.default_rng(2)
    a = rng.normal(size=(12, 16, 2))
    b = rng.normal(size=(12, 16, 2))
    cv = build_variance_volume(a, [b], [cam(), cam(t=(-30.0, 0, 0))])
    cover = np.stack([
        warp_image(b, cam(), cam(t=(-30.0, 0, 0)), np.full((12, 16), d))[1]
        for d in cv.depth_hypotheses
    ])
    assert (~cover).any() and cover.any()
    np.testing.assert_array_equal(cv.data[~cover], cv.data[cover].max())


def test_no_overlap_is_an_error():
    f = np.zeros((12, 16, 1))
    with pytest.raises(ValueError, match="overlaps"):
        build_variance_volume(f, [f], [cam(), cam(t=(-1e6, 0, 0))])


def test_input_validation():
    f = np.zeros((12, 16, 2))
    with pytest.raises(ValueError):
        build_variance_volume(f, [], [cam()])
    with pytest.raises(ValueError, match="channel"):
        build_variance_volume(f, [np.zeros((12, 16, 3))], [cam(), cam()])


def test_plane_argmin():
    # 12.5-unit planes step the disparity by about 0.7 px, enough for a per-pixel argmin
    # to resolve adjacent hypotheses
    scene, depths = render_synthetic_scene(
        SceneSpec(plane_depth=600.0, depth_min=400.0, depth_interval=12.5, depth_count=32))
    feats = [handcrafted_features(img) for img in scene.images]
    cv = build_variance_volume(feats[0], feats[1:], scene.cameras)
    nearest = np.argmin(np.abs(cv.depth_hypotheses - 600.0))
    # interior: every source sees the pixel at the true depth, two-pixel margin
    seen = np.ones(depths[0].shape, dtype=bool)
    for img, c in zip(scene.images[1:], scene.cameras[1:]):
        seen &= warp_image(img, scene.cameras[0], c, depths[0])[1]
    seen[:2] = seen[-2:] = False
    seen[:, :2] = seen[:, -2:] = False
    hit = cv.data.argmin(axis=0) == nearest
    assert hit[seen].mean() > 0.95


# ---------------------------------------------------------------- regularisation


def test_constant_volume_unchanged():
    cv = cv_from(np.full((5, 6, 7), 3.25))
    np.testing.assert_allclose(regularize_volume(cv).data, 3.25, rtol=1e-15)


def test_impulse_response_is_tensor_product():
    data = np.zeros((7, 7, 7))
    data[3, 3, 3] = 1.0
    out = regularize_volume(cv_from(data)).data
    k = SMOOTH_KERNEL
    want = np.zeros((7, 7, 7))
    want[2:5, 2:5, 2:5] = np.einsum("i,j,k->ijk", k, k, k)
    np.testing.assert_allclose(out, want, atol=1e-15)
    assert out.sum() == pytest.approx(1.0)


def test_twice_equals_self_convolved_kernel():
    rng = np.random.default_rng(3)
    data = rng.uniform(size=(10, 11, 12))
    twice = regularize_volume(regularize_volume(cv_from(data))).data
    k5 = np.convolve(SMOOTH_KERNEL, SMOOTH_KERNEL)  # [1, 4, 6, 4, 1] / 16
    kernel = np.einsum("i,j,k->ijk", k5, k5, k5)
    D, H, W = data.shape
    # edge replication is applied at each pass, so the identity holds two voxels from the border
    direct = np.zeros((D - 4, H - 4, W - 4))
    for a in range(5):
        for b in range(5):
            for c in range(5):
                direct += kernel[a, b, c] * data[a:a + D - 4, b:b + H - 4, c:c + W - 4]
    np.testing.assert_allclose(twice[2:-2, 2:-2, 2:-2], direct, atol=1e-9)


def test_regularized_nonnegative():
    data = np.random.default_rng(4).exponential(size=(6, 5, 4))
    assert (regularize_volume(cv_from(data)).data >= 0).all()


# ---------------------------------------------------------------- soft-argmin


def test_one_hot_limit():
    data = np.full((16, 1, 1), 1e6)
    data[7] = 0.0
    depth, prob, conf = soft_argmin(cv_from(data), 1.0)
    assert depth[0, 0] == 100 + 5 * 7
    assert conf[0, 0] == 1.0
    assert prob[7, 0, 0] == 1.0


def test_uniform_limit():
    depth, prob, _ = soft_argmin(cv_from(np.full((16, 2, 3), 0.4)), 1.0)
    np.testing.assert_allclose(prob, 1 / 16, rtol=1e-15)
    np.testing.assert_allclose(depth, np.mean(100 + 5 * np.arange(16)), rtol=1e-15)


def test_two_equal_minima_zero_temperature():
    data = np.full((10, 1, 1), 1.0)
    data[3] = data[5] = 0.0
    depth, _, _ = soft_argmin(cv_from(data), 1e-3)
    assert depth[0, 0] == pytest.approx((115 + 125) / 2, abs=1e-9)


def test_confidence_window():
    # mass spread over k = 4..7 with the regressed depth between them
    data = np.full((12, 1, 1), 1e3)
    data[4:8] = 0.0
    depth, prob, conf = soft_argmin(cv_from(data), 1.0)
    assert depth[0, 0] == pytest.approx(100 + 5 * 5.5)
    assert conf[0, 0] == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-50, 50), scale=st.floats(0.1, 10),
       temp=st.floats(0.05, 5))
def test_softargmin_properties(seed, shift, scale, temp):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 3, (20, 3, 4))
    cv = cv_from(data)
    depth, prob, conf = soft_argmin(cv, temp)
    np.testing.assert_allclose(prob.sum(axis=0), 1.0, atol=1e-6)
    assert ((prob >= 0) & (prob <= 1)).all()
    assert ((depth >= 100) & (depth <= 100 + 5 * 19)).all()
    assert ((conf >= 0) & (conf <= 1 + 1e-12)).all()
    d2, p2, _ = soft_argmin(cv_from(data + shift), temp)
    np.testing.assert_allclose(p2, prob, atol=1e-9)
    np.testing.assert_allclose(d2, depth, atol=1e-9, rtol=0)
    d3, p3, _ = soft_argmin(cv_from(data * scale), temp * scale)
    np.testing.assert_allclose(p3, prob, atol=1e-9)
    np.testing.assert_allclose(d3, depth, atol=1e-9, rtol=0)


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        soft_argmin(cv_from(np.zeros((3, 1, 1))), 0.0)
