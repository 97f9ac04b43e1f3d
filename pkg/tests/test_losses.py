import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympose.geometry import Pose, axis_angle
from sympose.losses import (LossWeights, center_loss, focal_loss, instance_targets,
                            multitask_loss, plain_keypoint_loss, softmax, symmetry_keypoint_loss)


def numeric(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        a = f(x)
        x[i] = old - eps
        b = f(x)
        x[i] = old
        g[i] = (a - b) / (2 * eps)
    return g


@given(st.integers(0, 10_000), st.floats(0.0, 3.0), st.floats(0.1, 1.0))
def test_focal_gradient(seed, gamma, alpha):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(6, 4)) * 2
    y = rng.integers(0, 4, 6)
    _, g = focal_loss(z, y, gamma, alpha)
    assert np.allclose(g, numeric(lambda v: focal_loss(v, y, gamma, alpha)[0], z), atol=1e-6)


def test_focal_reduces_to_weighted_cross_entropy():
    z = np.array([[2.0, 0.0, -1.0]])
    p = softmax(z)[0, 0]
    loss, _ = focal_loss(z, np.array([0]), gamma=0.0, alpha=0.25)
    assert loss == pytest.approx(-0.25 * np.log(p))
    with pytest.raises(ValueError):
        focal_loss(z, np.array([3]))


def test_center_loss_gradient(rng):
    p, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    loss, g = center_loss(p, t)
    assert loss == pytest.approx(np.abs(p - t).mean())
    assert np.allclose(g, numeric(lambda v: center_loss(v, t)[0], p), atol=1e-6)


def test_multitask_weights():
    assert multitask_loss(1.0, 2.0, 3.0, LossWeights(2.0, 1.0, 1.0)) == pytest.approx(7.0)


def test_instance_targets_rotate_about_centre():
    kps = np.array([[0.1, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.02]]) + 0.01
    center = np.full(3, 0.01)
    pose = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
    pts = np.array([[0.0, 0.0, 1.0], [0.01, 0.0, 1.0]])
    S = np.stack([np.eye(3), axis_angle([0, 0, 1], np.pi)])
    t = instance_targets(pts, np.array([0, 1]), kps, center, pose, S)
    assert t.variant_offsets.shape == (2, 2, 3, 3)
    flipped = t.variant_offsets[1, 0] + pts[0] - pose.translation - center
    assert np.allclose(flipped[0], [-0.1, 0.0, 0.0])
    assert np.allclose(t.center_offsets, center + pose.translation - pts)


def test_plain_loss_is_mean_point_error(rng):
    pred, tgt = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 2, 3))
    loss, _ = plain_keypoint_loss(pred, tgt)
    assert loss == pytest.approx(np.linalg.norm(pred - tgt, axis=-1).sum() / 4)
    with pytest.raises(ValueError):
        symmetry_keypoint_loss(np.zeros((0, 2, 3)), np.zeros((1, 0, 2, 3)))
