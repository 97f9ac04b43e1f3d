import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympose.keypoints import (curvature_salience, farthest_point_sample, fps_indices,
                               select_keypoints)
from sympose.mesh import library_mesh


def fps_oracle(points, w, m):
    # direct restatement: each pick maximizes w_i * min_j |p_i - p_j| over unpicked points
    chosen = [int(np.argmax(w))]
    while len(chosen) < m:
        best, bi = -1.0, -1
        for i in range(len(points)):
            if i in chosen:
                continue
            s = w[i] * min(np.linalg.norm(points[i] - points[j]) for j in chosen)
            if s > best:
                best, bi = s, i
        chosen.append(bi)
    return chosen


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_fps_matches_oracle(seed, m):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3))
    w = rng.uniform(0.1, 1.0, 30)
    assert fps_indices(pts, w, m).tolist() == fps_oracle(pts, w, m)


def test_uniform_fps_spreads_points():
    line = np.column_stack([np.linspace(0, 1, 101), np.zeros(101), np.zeros(101)])
    idx = fps_indices(line, np.ones(101), 3)
    assert sorted(idx.tolist()) == [0, 50, 100]


def test_fps_rejects_bad_input():
    with pytest.raises(ValueError):
        fps_indices(np.zeros((3, 3)), np.ones(3), 4)
    with pytest.raises(ValueError):
        fps_indices(np.eye(3), -np.ones(3), 2)


def test_curvature_salience_flat_vs_edge():
    mesh = library_mesh(2)
    sal = curvature_salience(mesh.surface_samples, mesh.sample_normals)
    assert (sal >= 0).all()
    p = mesh.surface_samples
    half = np.abs(p).max(0)
    on_faces = np.isclose(np.abs(p), half, atol=1e-9).sum(1)
    # points near an edge see neighbours on two faces, so they score higher
    interior = sal[(on_faces == 1) & (np.abs(p) < 0.7 * half).sum(1).astype(bool)]
    assert np.median(interior) < 0.05
    assert sal.max() > 0.2


def test_select_keypoints_shape_and_determinism():
    mesh = library_mesh(4)
    a = select_keypoints(mesh, 4)
    b = select_keypoints(mesh, 4)
    assert a.keypoints.shape == (8, 3)
    assert np.array_equal(a.keypoints, b.keypoints)
    assert np.allclose(a.center, mesh.centroid)
    assert len(np.unique(a.keypoints, axis=0)) == 8
    u = select_keypoints(mesh, 4, "uniform")
    assert not np.array_equal(u.keypoints, a.keypoints)
    with pytest.raises(ValueError):
        select_keypoints(mesh, 4, "random")


def test_farthest_point_sample_returns_points(rng):
    pts = rng.normal(size=(20, 3))
    out = farthest_point_sample(pts, np.ones(20), 4)
    assert all(any(np.array_equal(o, p) for p in pts) for o in out)
