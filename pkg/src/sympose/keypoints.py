"""Target keypoint selection: salience-weighted farthest point sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mesh import Mesh

N_KEYPOINTS = 8


@dataclass
class KeypointModel:
    class_id: int
    keypoints: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)

    @property
    def all_points(self) -> np.ndarray:
        """Keypoints followed by the centre, (M + 1) x 3."""
        return np.vstack([self.keypoints, self.center])

    def to_json(self) -> dict:
        return {"class_id": int(self.class_id), "keypoints": self.keypoints.tolist(),
                "center": self.center.tolist()}

    @classmethod
    def from_json(cls, d) -> "KeypointModel":
        return cls(d["class_id"], d["keypoints"], d["center"])


def fps_indices(points, salience, m: int) -> np.ndarray:
    """Greedy salience-weighted farthest point sampling.

    Starts at the most salient point; each next pick maximizes
    ``salience * distance to the chosen set``. Ties go to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(salience, dtype=np.float64)
    if len(pts) < m:
        raise ValueError(f"need at least {m} samples, got {len(pts)}")
    if (w < 0).any():
        raise ValueError("salience must be non-negative")
    chosen = [int(np.argmax(w))]
    min_d = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    taken = np.zeros(len(pts), dtype=bool)
    taken[chosen[0]] = True
    for _ in range(m - 1):
        score = np.where(taken, -np.inf, w * min_d)
        nxt = int(np.argmax(score))
        chosen.append(nxt)
        taken[nxt] = True
        min_d = np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.asarray(chosen)


def farthest_point_sample(points, salience, m: int) -> np.ndarray:
    return np.asarray(points, dtype=np.float64)[fps_indices(points, salience, m)]


def curvature_salience(points, normals, k: int = 16) -> np.ndarray:
    """Mean of 1 - |n_i . n_j| over the k nearest neighbours j of each point."""
    idx = kernels.knn(points, points, k + 1)[:, 1:]
    n = np.asarray(normals, dtype=np.float64)
    dots = np.minimum(np.abs(np.einsum("ikc,ic->ik", n[idx], n)), 1.0)
    return (1.0 - dots).mean(axis=1)


def object_center(mesh: Mesh) -> np.ndarray:
    return mesh.centroid.copy()


def select_keypoints(mesh: Mesh, class_id: int = 0, mode: str = "curvature",
                     m: int = N_KEYPOINTS) -> KeypointModel:
    pts = mesh.surface_samples
    if mode == "curvature":
        sal = curvature_salience(pts, mesh.sample_normals)
    elif mode == "uniform":
        sal = np.ones(len(pts))
    else:
        raise ValueError(f"unknown keypoint mode {mode!r}")
    return KeypointModel(class_id, farthest_point_sample(pts, sal, m), object_center(mesh))
