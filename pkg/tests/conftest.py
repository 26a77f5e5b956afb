import numpy as np
import pytest

from mvsopt.scene_io import Camera
from mvsopt.synthetic import SceneSpec, render_synthetic_scene


def small_spec(**kw):
    """16x16, three views, texture fine enough to give every term a gradient."""
    base = dict(width=16, height=16, focal=25.0, views=3, baseline=60.0,
                wavelength_px=(2.5, 8.0), depth_min=500.0, depth_interval=3.125, depth_count=64)
    base.update(kw)
    return SceneSpec(**base)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_camera(rng, width=64, height=64):
    f = rng.uniform(30, 300)
    K = np.array([[f * rng.uniform(0.8, 1.2), rng.uniform(-1, 1), rng.uniform(0, width - 1)],
                  [0, f, rng.uniform(0, height - 1)],
                  [0, 0, 1]])
    return Camera(K, random_rotation(rng), rng.normal(0, 50, 3), 100.0, 2.0, 32)


@pytest.fixture(scope="session")
def small_scene():
    scene, depths = render_synthetic_scene(small_spec())
    return scene, depths


@pytest.fixture(scope="session")
def plane_scene():
    """128x128 textured fronto-parallel plane at depth 603, three views, D = 64."""
    scene, depths = render_synthetic_scene(SceneSpec(plane_depth=603.0))
    return scene, depths
