"""Rigid transforms, pinhole cameras, and multi-view point-cloud merging."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quaternion(cls, q, translation) -> "Pose":
        return cls(quat_to_matrix(q), translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def is_valid(self, tol: float = _ORTHO_TOL) -> bool:
        R = self.rotation
        return (np.abs(R.T @ R - np.eye(3)).max() <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol
                and np.isfinite(self.translation).all())

    def to_json(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Pose":
        if "quaternion" in d:
            return cls.from_quaternion(d["quaternion"], d["translation"])
        return cls(d["rotation"], d["translation"])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None


def compose(a: Pose, b: Pose) -> Pose:
    """Pose that applies ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -(Rt @ p.translation))


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    # arccos is ill-conditioned near 0; use the skew part there
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


def rotation_distance(R1, R2) -> float:
    return rotation_angle(np.asarray(R1).T @ np.asarray(R2))


def axis_angle(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rot_z(angle) -> np.ndarray:
    return axis_angle([0.0, 0.0, 1.0], angle)


def project_to_so3(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


def quat_to_matrix(q) -> np.ndarray:
    """Quaternion in (w, x, y, z) order to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.asarray(q)
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics of a feature map downsampled by an integer stride.

        Feature-map cell (i, j) sits at the centre of its stride x stride block.
        """
        s = float(factor)
        off = (s - 1.0) / 2.0
        return CameraIntrinsics(self.fx / s, self.fy / s, (self.cx - off) / s,
                                (self.cy - off) / s, self.width // factor, self.height // factor)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass
class ViewFrame:
    """One RGB-D view. ``camera_pose`` maps camera coordinates to world."""

    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    camera_pose: Pose
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(f"depth shape {d.shape} does not match intrinsics")
        if not np.isfinite(d).all() or (d < 0).any():
            raise ValueError("depth must be finite and non-negative")
        self.depth = d


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    source_view: Optional[np.ndarray] = None
    pixels: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        take = lambda a: None if a is None else a[idx]
        return PointCloud(self.points[idx], take(self.colors), take(self.source_view),
                          take(self.pixels), take(self.labels),
                          {k: v[idx] for k, v in self.extra.items()})


def project(points, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points to (u, v) pixel coordinates (u = column)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
    v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
    return np.stack([u, v], axis=1)


def backproject(depth, intr: CameraIntrinsics) -> np.ndarray:
    """H x W x 3 camera-frame coordinates of every pixel (zeros where depth is 0)."""
    H, W = depth.shape
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    x = (u - intr.cx) * depth / intr.fx
    y = (v - intr.cy) * depth / intr.fy
    return np.stack([x, y, depth], axis=-1)


def depth_to_cloud(view: ViewFrame) -> PointCloud:
    """Back-project valid pixels in row-major order, camera frame."""
    valid = view.depth > 0
    if not valid.any():
        raise ValueError("empty cloud: no valid depth pixels")
    xyz = backproject(view.depth, view.intrinsics)
    rows, cols = np.nonzero(valid)
    colors = None if view.rgb is None else np.asarray(view.rgb)[rows, cols]
    labels = None if view.labels is None else np.asarray(view.labels)[rows, cols]
    return PointCloud(xyz[rows, cols], colors, np.zeros(len(rows), dtype=np.int64),
                      np.stack([rows, cols], axis=1), labels)


def relative_poses(views: Sequence[ViewFrame]) -> list:
    """Pose of each camera expressed in the first camera's frame."""
    ref = invert(views[0].camera_pose)
    return [compose(ref, v.camera_pose) for v in views]


def merge_views(views: Sequence[ViewFrame]) -> PointCloud:
    """Concatenate per-view clouds in the first camera's frame."""
    if len(views) == 0:
        raise ValueError("merge_views needs at least one view")
    parts = []
    for k, (view, rel) in enumerate(zip(views, relative_poses(views))):
        try:
            cloud = depth_to_cloud(view)
        except ValueError:
            continue
        pts = cloud.points if k == 0 else rel.apply(cloud.points)
        parts.append(PointCloud(pts, cloud.colors, np.full(len(pts), k, dtype=np.int64),
                                cloud.pixels, cloud.labels))
    if not parts:
        raise ValueError("empty cloud: no valid depth pixels in any view")
    cat = lambda name: (None if getattr(parts[0], name) is None
                        else np.concatenate([getattr(p, name) for p in parts]))
    return PointCloud(cat("points"), cat("colors"), cat("source_view"), cat("pixels"), cat("labels"))
