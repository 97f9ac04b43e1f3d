import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympose.geometry import Pose, random_rotation, rotation_distance
from sympose.voting import assemble_instances, fit_instances, least_squares_fit, mean_shift
from sympose.keypoints import KeypointModel


def test_mean_shift_finds_dominant_cluster(rng):
    a = rng.normal([0.1, 0.2, 0.3], 0.003, (200, 3))
    b = rng.normal([0.5, 0.5, 0.5], 0.003, (50, 3))
    noise = rng.uniform(-1, 1, (30, 3))
    m = mean_shift(np.vstack([a, b, noise]), 0.02)
    assert np.linalg.norm(m - [0.1, 0.2, 0.3]) < 2e-3


def test_mean_shift_is_weighted_mean_for_tight_cluster():
    v = np.array([[0.0, 0, 0], [0.001, 0, 0]])
    m = mean_shift(v, 1.0, weights=[1.0, 3.0], tol=1e-14)
    assert m[0] == pytest.approx(0.00075, abs=1e-9)


def test_mean_shift_errors():
    with pytest.raises(ValueError):
        mean_shift(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        mean_shift(np.zeros((2, 3)), bandwidth=0.0)


@given(st.integers(0, 10_000), st.integers(3, 12))
def test_kabsch_exact_recovery(seed, m):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(m, 3))
    R, t = random_rotation(rng), rng.uniform(-1, 1, 3)
    est, res = least_squares_fit(P @ R.T + t, P, return_residual=True)
    assert rotation_distance(est.rotation, R) < 1e-9
    assert np.linalg.norm(est.translation - t) < 1e-9
    assert res < 1e-9


def test_kabsch_never_returns_reflection(rng):
    P = rng.normal(size=(8, 3))
    Q = P * [1, 1, -1]          # mirror image: best proper rotation is still a rotation
    est = least_squares_fit(Q, P)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_kabsch_rank_deficient():
    with pytest.raises(ValueError, match="rank"):
        least_squares_fit(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.column_stack([np.arange(4.0), np.zeros(4), np.zeros(4)])
    with pytest.raises(ValueError, match="collinear"):
        least_squares_fit(line, line)


def test_assemble_and_fit_exact_offsets(rng):
    km = KeypointModel(3, rng.normal(0, 0.05, (8, 3)), np.zeros(3))
    pose = Pose(random_rotation(rng), np.array([0.1, 0.0, 0.7]))
    pts = pose.translation + rng.normal(0, 0.03, (60, 3))
    kp_off = pose.apply(km.keypoints)[None] - pts[:, None]
    c_off = pose.translation - pts
    labels = np.full(60, 3)
    labels[:5] = 0
    inst = assemble_instances(pts, labels, kp_off, c_off, 0.02, 10)
    assert list(inst) == [3] and inst[3][2] == 55
    est = fit_instances(inst, {3: km})[0]
    assert rotation_distance(est.pose.rotation, pose.rotation) < 1e-6
    assert np.linalg.norm(est.pose.translation - pose.translation) < 1e-6


def test_small_classes_are_dropped(rng):
    pts = rng.normal(size=(5, 3))
    inst = assemble_instances(pts, np.full(5, 2), np.zeros((5, 8, 3)), np.zeros((5, 3)),
                              min_points=10)
    assert inst == {}
