"""Pose accuracy metrics (ADD, ADD-S, ADD(-S)), AUC and report output."""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import kernels
from .geometry import Pose, rotation_distance

AUC_MAX = 0.10
PRECISION_THRESHOLD = 0.02


def _model(points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty model points")
    return pts


def add_error(pose_est: Pose, pose_gt: Pose, points) -> float:
    pts = _model(points)
    return float(np.linalg.norm(pose_est.apply(pts) - pose_gt.apply(pts), axis=1).mean())


def adds_error(pose_est: Pose, pose_gt: Pose, points) -> float:
    """Mean distance from each estimated point to the nearest ground-truth point."""
    pts = _model(points)
    est = np.ascontiguousarray(pose_est.apply(pts))
    gt = np.ascontiguousarray(pose_gt.apply(pts))
    return float(np.mean(kernels.closest_distances(est, gt)))


def add_dash_s(pose_est: Pose, pose_gt: Pose, points, is_symmetric: bool) -> float:
    if is_symmetric:
        return adds_error(pose_est, pose_gt, points)
    return add_error(pose_est, pose_gt, points)


def quotient_add_error(pose_est: Pose, pose_gt: Pose, points, sym_transforms) -> float:
    """ADD minimized over the symmetry set: min over S of ADD(est, gt composed with S)."""
    pts = _model(points)
    est = pose_est.apply(pts)
    best = np.inf
    for S in np.asarray(sym_transforms, dtype=np.float64).reshape(-1, 3, 3):
        g = pts @ (pose_gt.rotation @ S).T + pose_gt.translation
        best = min(best, float(np.linalg.norm(est - g, axis=1).mean()))
    return best


def quotient_rotation_error(R_est, R_gt, sym_transforms) -> float:
    """Smallest rotation distance between R_est and R_gt S over the symmetry set (radians)."""
    S = np.asarray(sym_transforms, dtype=np.float64).reshape(-1, 3, 3)
    return min(rotation_distance(R_est, R_gt @ s) for s in S)


def auc(errors, max_threshold=AUC_MAX) -> float:
    """Area under accuracy(theta) for theta in [0, max], as a percentage.

    accuracy is the fraction of errors strictly below theta, a step function
    rising at each error; the area is sum(max - e) over errors below max.
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("empty error list")
    if (e < 0).any():
        raise ValueError("errors must be non-negative")
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    area = np.clip(max_threshold - e, 0.0, None).sum() / (e.size * max_threshold)
    return float(100.0 * area)


def precision_at(errors, threshold=PRECISION_THRESHOLD) -> float:
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("empty error list")
    return float(100.0 * np.count_nonzero(e < threshold) / e.size)


def accuracy_curve(errors, max_threshold=AUC_MAX, n=201):
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    th = np.linspace(0.0, max_threshold, n)
    return th, 100.0 * np.searchsorted(e, th, side="left") / max(e.size, 1)


@dataclass
class MetricReport:
    """Raw errors per class; summaries computed on demand.

    ``adds`` and ``add_s`` map class id to lists of metres; a missed
    detection is recorded as ``inf`` so it counts against every threshold.
    """

    adds: Dict[int, List[float]] = field(default_factory=dict)
    add_s: Dict[int, List[float]] = field(default_factory=dict)
    scenes: List[dict] = field(default_factory=list)
    max_threshold: float = AUC_MAX

    def record(self, scene_id, class_id, adds, add_s):
        self.adds.setdefault(int(class_id), []).append(float(adds))
        self.add_s.setdefault(int(class_id), []).append(float(add_s))
        self.scenes.append({"scene": int(scene_id), "class_id": int(class_id),
                            "adds": float(adds), "add_s": float(add_s)})

    def _summary(self, adds, add_s):
        return {"adds_auc": auc(np.minimum(adds, 1e9), self.max_threshold),
                "add_s_auc": auc(np.minimum(add_s, 1e9), self.max_threshold),
                "precision_2cm": precision_at(adds),
                "add_s_precision_2cm": precision_at(add_s),
                "count": len(adds)}

    def rows(self):
        out = []
        for c in sorted(self.adds):
            for k, v in self._summary(self.adds[c], self.add_s[c]).items():
                out.append((str(c), k, v))
        if self.adds:
            all_adds = np.concatenate([self.adds[c] for c in sorted(self.adds)])
            all_adds_s = np.concatenate([self.add_s[c] for c in sorted(self.add_s)])
            for k, v in self._summary(all_adds, all_adds_s).items():
                out.append(("all", k, v))
        return out

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "metric", "value"])
        for c, k, v in self.rows():
            w.writerow([c, k, f"{v:.6f}" if isinstance(v, float) else v])
        return buf.getvalue()

    def json_errors(self):
        return sorted(self.scenes, key=lambda r: (r["scene"], r["class_id"]))

    def to_json(self) -> dict:
        summary = {}
        for c, k, v in self.rows():
            summary.setdefault(c, {})[k] = v
        return {"max_threshold": self.max_threshold, "summary": summary,
                "errors": self.json_errors()}


def read_report_csv(path) -> Dict[str, Dict[str, float]]:
    out: Dict[str, Dict[str, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["class"], {})[row["metric"]] = float(row["value"])
    return out


def plot_curves(curves: Dict[str, Sequence[float]], path, max_threshold=AUC_MAX):
    """Accuracy-threshold curves for each named error list, saved as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "sympose"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in sorted(curves):
        th, acc = accuracy_curve(curves[name], max_threshold)
        ax.plot(th * 100, acc, label=name)
    ax.set_xlabel("threshold [cm]")
    ax.set_ylabel("accuracy [%]")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
