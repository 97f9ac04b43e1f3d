import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympose.geometry import (CameraIntrinsics, Pose, ViewFrame, axis_angle, backproject, compose,
                              depth_to_cloud, invert, matrix_to_quat, merge_views, project,
                              quat_to_matrix, random_rotation, rotation_angle, rotation_distance)

from conftest import random_pose

seeds = st.integers(0, 2**31 - 1)


@given(seeds)
def test_compose_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pose(rng), random_pose(rng)
    assert np.allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)
    assert np.allclose(compose(a, invert(a)).matrix(), np.eye(4), atol=1e-12)


@given(seeds)
def test_quaternion_roundtrip(seed):
    R = random_rotation(np.random.default_rng(seed))
    assert np.allclose(quat_to_matrix(matrix_to_quat(R)), R, atol=1e-12)


@given(st.floats(1e-7, np.pi - 1e-7), seeds)
def test_rotation_angle_of_axis_angle(angle, seed):
    axis = np.random.default_rng(seed).normal(size=3)
    assert rotation_angle(axis_angle(axis, angle)) == pytest.approx(angle, abs=1e-10)


def test_rotation_distance_is_symmetric(rng):
    for _ in range(20):
        A, B = random_rotation(rng), random_rotation(rng)
        assert rotation_distance(A, B) == pytest.approx(rotation_distance(B, A), abs=1e-12)


def test_reflection_is_not_a_valid_pose(rng):
    assert not Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).is_valid()
    assert not Pose(np.eye(3) * 1.001, np.zeros(3)).is_valid()
    assert random_pose(rng).is_valid()


def test_project_backproject_roundtrip(rng):
    intr = CameraIntrinsics(100.0, 110.0, 31.5, 23.5, 64, 48)
    depth = rng.uniform(0.5, 2.0, (48, 64))
    xyz = backproject(depth, intr)
    uv = project(xyz.reshape(-1, 3), intr)
    v, u = np.mgrid[0:48, 0:64]
    assert np.allclose(uv, np.stack([u.ravel(), v.ravel()], 1), atol=1e-9)


def test_scaled_intrinsics_hit_block_centres():
    intr = CameraIntrinsics(150.0, 150.0, 80.0, 60.0, 160, 120)
    s = intr.scaled(4)
    p = np.array([[0.05, -0.02, 0.7]])
    full = project(p, intr)[0]
    small = project(p, s)[0]
    # a feature cell (i, j) covers full-resolution pixels 4j .. 4j+3, centre 4j + 1.5
    assert np.allclose(small * 4 + 1.5, full)


def test_merge_views_matches_loop(rng):
    intr = CameraIntrinsics(50.0, 50.0, 10.0, 8.0, 20, 16)
    views = []
    for _ in range(3):
        depth = rng.uniform(0.5, 1.0, (16, 20))
        depth[rng.random((16, 20)) < 0.3] = 0.0
        views.append(ViewFrame(None, depth, intr, random_pose(rng)))
    merged = merge_views(views)
    ref = []
    for v in views:
        cloud = depth_to_cloud(v)
        rel = compose(invert(views[0].camera_pose), v.camera_pose)
        ref.append(cloud.points @ rel.rotation.T + rel.translation)
    assert np.allclose(merged.points, np.concatenate(ref), atol=1e-12)
    assert list(np.bincount(merged.source_view)) == [len(r) for r in ref]


def test_empty_inputs_raise():
    intr = CameraIntrinsics(50.0, 50.0, 10.0, 8.0, 20, 16)
    with pytest.raises(ValueError):
        depth_to_cloud(ViewFrame(None, np.zeros((16, 20)), intr, Pose.identity()))
    with pytest.raises(ValueError):
        merge_views([])
    with pytest.raises(ValueError):
        ViewFrame(None, np.zeros((3, 3)), intr, Pose.identity())
