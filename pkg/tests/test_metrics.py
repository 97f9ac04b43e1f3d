import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympose.geometry import Pose, axis_angle
from sympose.metrics import (MetricReport, accuracy_curve, add_error, adds_error, auc,
                             precision_at, quotient_add_error, quotient_rotation_error,
                             read_report_csv)
from sympose.mesh import library_mesh

from conftest import random_pose


def test_identical_poses_have_zero_error(rng):
    p = random_pose(rng)
    pts = library_mesh(5).surface_samples
    assert add_error(p, p, pts) == 0.0
    assert adds_error(p, p, pts) == 0.0


def test_adds_invariant_to_symmetry():
    pts = library_mesh(1).surface_samples        # scalene cuboid, 180 deg about z
    gt = Pose(np.eye(3), np.array([0, 0, 0.8]))
    est = Pose(axis_angle([0, 0, 1], np.pi), gt.translation)
    assert add_error(est, gt, pts) > 0.05
    # only the spacing of the 2,048 surface samples remains
    assert adds_error(est, gt, pts) < 5e-3
    S = np.stack([np.eye(3), axis_angle([0, 0, 1], np.pi)])
    assert quotient_add_error(est, gt, pts, S) < 1e-12
    assert quotient_rotation_error(est.rotation, gt.rotation, S) < 1e-12


def test_translation_error_is_exact():
    pts = library_mesh(2).surface_samples
    gt = Pose.identity()
    est = Pose(np.eye(3), np.array([0.01, 0.0, 0.0]))
    assert add_error(est, gt, pts) == pytest.approx(0.01)


@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=30), st.floats(0.01, 0.2))
def test_auc_matches_trapezoid_of_step_curve(errors, mx):
    # numeric integration of the accuracy step function on a fine grid
    th = np.linspace(0, mx, 200_001)
    acc = (np.asarray(errors)[None, :] < th[:, None]).mean(1)
    ref = 100 * np.trapezoid(acc, th) / mx
    assert auc(errors, mx) == pytest.approx(ref, abs=0.01)


def test_auc_edge_values():
    assert auc([0.0] * 5) == 100.0
    assert auc([0.05]) == 50.0
    assert auc([np.inf, 0.0]) == 50.0
    with pytest.raises(ValueError):
        auc([])
    with pytest.raises(ValueError):
        auc([-0.1])


def test_precision_is_strict():
    assert precision_at([0.02, 0.0199, 0.5]) == pytest.approx(100 / 3)


def test_accuracy_curve_monotone(rng):
    th, acc = accuracy_curve(rng.uniform(0, 0.1, 50))
    assert np.all(np.diff(acc) >= 0) and acc[0] == 0


def test_report_csv_roundtrip(tmp_path):
    r = MetricReport()
    r.record(0, 1, 0.01, 0.012)
    r.record(0, 5, 0.03, 0.04)
    r.record(1, 1, np.inf, np.inf)
    path = tmp_path / "r.csv"
    path.write_text(r.to_csv())
    back = read_report_csv(path)
    assert back["1"]["precision_2cm"] == pytest.approx(50.0)
    assert back["all"]["count"] == 3
    assert back["5"]["adds_auc"] == pytest.approx(70.0)
