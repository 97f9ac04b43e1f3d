import numpy as np
import pytest

from sympose.features import (PIXEL_DIM, POINT_DIM, depth_normals, fit_table_plane,
                              scene_features)
from sympose.geometry import CameraIntrinsics, backproject
from sympose.rng import rng_for
from sympose.scenegen import SceneSpec, generate_scene


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneSpec(seed=5, scene_id=2))


def test_feature_shapes(scene):
    f = scene_features(scene.views, rng_for(0, "points", 2))
    assert f.points.features.shape == (1024, POINT_DIM)
    assert f.pixels.features.shape == (3, 30, 40, PIXEL_DIM)
    assert np.isfinite(f.points.features).all()
    assert len(np.unique(f.cloud_index)) == 1024


def test_object_points_dominate_sample(scene):
    f = scene_features(scene.views, rng_for(0, "points", 2))
    assert (f.labels > 0).mean() > 0.7


def test_features_deterministic(scene):
    a = scene_features(scene.views, rng_for(0, "points", 2))
    b = scene_features(scene.views, rng_for(0, "points", 2))
    assert np.array_equal(a.points.features, b.points.features)


def test_plane_fit_recovers_tilted_plane(rng):
    n = np.array([0.1, -0.2, 1.0])
    n /= np.linalg.norm(n)
    pts = rng.uniform(-0.3, 0.3, (2000, 3))
    pts -= np.outer(pts @ n + 0.5, n)
    pts += rng.normal(0, 1e-4, pts.shape) * n
    clutter = rng.uniform(-0.3, 0.3, (300, 3))
    guess = n + [0.05, 0.0, 0.0]
    guess /= np.linalg.norm(guess)
    m, d = fit_table_plane(np.vstack([pts, clutter]), guess, 0.5)
    assert np.allclose(m, n, atol=1e-3) and d == pytest.approx(0.5, abs=1e-3)


def test_depth_normals_of_a_plane():
    intr = CameraIntrinsics(60.0, 60.0, 19.5, 14.5, 40, 30)
    ray = backproject(np.ones((30, 40)), intr)
    n = np.array([0.0, 0.3, -1.0])
    n /= np.linalg.norm(n)
    # depth of the plane n . x = -1 along each pixel ray
    depth = -1.0 / (ray @ n)
    out = depth_normals(depth, intr)
    inner = out[3:-3, 3:-3].reshape(-1, 3)
    assert np.allclose(np.abs(inner @ n), 1.0, atol=1e-6)
