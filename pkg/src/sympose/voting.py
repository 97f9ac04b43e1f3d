"""Offset voting, mean-shift mode finding and rigid least-squares fitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .geometry import Pose

BANDWIDTH = 0.02
MIN_POINTS = 10
SHIFT_TOL = 1e-6
MAX_SHIFT_ITER = 100


@dataclass
class VoteSet:
    """Votes per (class, slot); slot M is the centre, 0..M-1 the keypoints."""

    proposals: Dict[tuple, np.ndarray] = field(default_factory=dict)
    weights: Optional[Dict[tuple, np.ndarray]] = None

    def add(self, class_id, slot, votes, weights=None):
        votes = np.asarray(votes, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(votes).all():
            raise ValueError("votes must be finite")
        self.proposals[(int(class_id), int(slot))] = votes
        if weights is not None:
            if self.weights is None:
                self.weights = {}
            self.weights[(int(class_id), int(slot))] = np.asarray(weights, dtype=np.float64)


@dataclass
class PoseEstimate:
    class_id: int
    pose: Pose
    fitted_keypoints: np.ndarray
    inlier_count: int
    residual: float

    def to_json(self):
        d = {"class_id": int(self.class_id), "residual": float(self.residual),
             "inlier_count": int(self.inlier_count)}
        d.update(self.pose.to_json())
        return d


def _kernel_weights(d2, bandwidth):
    return np.exp(-0.5 * d2 / (bandwidth * bandwidth))


def mean_shift(votes, bandwidth=BANDWIDTH, weights=None, max_iter=MAX_SHIFT_ITER,
               tol=SHIFT_TOL) -> np.ndarray:
    """Gaussian-kernel mean shift started at the densest vote.

    The seed is the vote with the highest kernel density over all votes, so
    the returned mode belongs to the dominant cluster.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    v = np.asarray(votes, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise ValueError("empty votes")
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=np.float64)
    # densest seed, in chunks so memory stays bounded for large vote sets
    best, best_d = 0, -1.0
    for s in range(0, len(v), 1024):
        d2 = ((v[s:s + 1024, None, :] - v[None, :, :]) ** 2).sum(-1)
        dens = _kernel_weights(d2, bandwidth) @ w
        i = int(np.argmax(dens))
        if dens[i] > best_d:
            best, best_d = s + i, float(dens[i])
    x = v[best].copy()
    for _ in range(max_iter):
        k = _kernel_weights(((v - x) ** 2).sum(-1), bandwidth) * w
        tot = k.sum()
        if tot <= 0:
            break
        new = k @ v / tot
        shift = np.linalg.norm(new - x)
        x = new
        if shift < tol:
            break
    return x


def least_squares_fit(detected, model, return_residual=False):
    """Rigid (R, t) minimizing the summed squared keypoint distances.

    Kabsch: centre both sets, SVD of the cross-covariance, flip the weakest
    singular direction if the determinant comes out negative.
    """
    Q = np.asarray(detected, dtype=np.float64)
    P = np.asarray(model, dtype=np.float64)
    if Q.shape != P.shape or Q.ndim != 2 or Q.shape[1] != 3:
        raise ValueError("detected and model must both be M x 3")
    if len(P) < 3:
        raise ValueError("rank deficient: need at least 3 keypoints")
    pc, qc = P.mean(0), Q.mean(0)
    P0, Q0 = P - pc, Q - qc
    sv = np.linalg.svd(P0, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise ValueError("rank deficient: model keypoints are collinear")
    H = P0.T @ Q0
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    t = qc - R @ pc
    pose = Pose(R, t)
    if not return_residual:
        return pose
    res = float(np.sqrt(((P @ R.T + t - Q) ** 2).sum(1).mean()))
    return pose, res


def cast_votes(points, labels, kp_offsets, center_offsets, classes) -> VoteSet:
    """Point + predicted offset for every point of each requested class."""
    vs = VoteSet()
    M = kp_offsets.shape[1]
    for c in classes:
        sel = labels == c
        for m in range(M):
            vs.add(c, m, points[sel] + kp_offsets[sel, m])
        vs.add(c, M, points[sel] + center_offsets[sel])
    return vs


def assemble_instances(points, labels, kp_offsets, center_offsets, bandwidth=BANDWIDTH,
                       min_points=MIN_POINTS, classes=None):
    """One keypoint set per predicted class.

    Returns {class_id: (keypoints M x 3, centre, n_inliers)} in class order;
    classes with fewer than ``min_points`` points are left out. Votes from
    points whose centre prediction lands farther than three bandwidths from
    the centre mode are dropped.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    kp_offsets = np.asarray(kp_offsets, dtype=np.float64)
    center_offsets = np.asarray(center_offsets, dtype=np.float64)
    if classes is None:
        classes = [int(c) for c in np.unique(labels) if c > 0]
    out = {}
    for c in sorted(classes):
        sel = np.flatnonzero(labels == c)
        if len(sel) < min_points:
            continue
        cvotes = points[sel] + center_offsets[sel]
        center = mean_shift(cvotes, bandwidth)
        keep = np.linalg.norm(cvotes - center, axis=1) <= 3 * bandwidth
        if keep.sum() < min_points:
            keep = np.ones(len(sel), dtype=bool)
        use = sel[keep]
        kps = np.stack([mean_shift(points[use] + kp_offsets[use, m], bandwidth)
                        for m in range(kp_offsets.shape[1])])
        out[c] = (kps, center, int(keep.sum()))
    return out


def fit_instances(instances, keypoint_models) -> List[PoseEstimate]:
    """Least-squares pose per instance; keypoints and centre enter the fit together."""
    estimates = []
    for c, (kps, center, n) in sorted(instances.items()):
        km = keypoint_models[c]
        try:
            pose, res = least_squares_fit(np.vstack([kps, center]), km.all_points,
                                          return_residual=True)
        except (ValueError, np.linalg.LinAlgError):
            continue
        estimates.append(PoseEstimate(c, pose, np.vstack([kps, center]), n, res))
    return estimates
