"""Rotational symmetry discovery by gradient descent on the ADD-S residual.

Every candidate is a rotation about the mesh's surface centroid. A seed grid
of axes (cube face, edge and corner directions in the mesh's principal frame)
times rotation orders is refined by descent on the closest-point residual;
survivors below ``tau_frac * diameter`` become symmetries. Continuous
symmetries are discretized into a fixed number of rotations.
"""
from __future__ import annotations

import itertools
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import axis_angle, rotation_angle, rotation_distance
from .mesh import Mesh

DISCRETE = "discrete"
CONTINUOUS = "discretized-continuous"
REFLECTION = "reflection"

SEED_ANGLES_DEG = (180.0, 120.0, 90.0, 72.0, 60.0, 45.0)


@dataclass
class DiscoveryConfig:
    tau_frac: float = 0.01
    angles_deg: tuple = SEED_ANGLES_DEG
    step: float = 1e-2
    decay: float = 0.5
    max_iter: int = 200
    converge_tol: float = 1e-7          # metres
    fd_step: float = 1e-3               # radians
    opt_samples: int = 512              # query subset used during descent
    abort_after: int = 40
    abort_factor: float = 4.0
    n_continuous_test: int = 32
    n_discretize: int = 16
    dedupe_tol: float = 0.05            # radians
    snap_tol: float = 2e-2              # radians
    polish_iter: int = 40
    check_reflections: bool = True
    workers: int = 1


@dataclass
class SymmetryCandidate:
    axis: np.ndarray
    angle: float
    residual: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        self.axis = a / np.linalg.norm(a)

    def matrix(self) -> np.ndarray:
        return axis_angle(self.axis, self.angle)


@dataclass
class SymmetrySet:
    transforms: List[np.ndarray]
    kinds: List[str]
    name: str = "object"
    residuals: Optional[List[float]] = None
    continuous_axis: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.transforms)

    @property
    def is_symmetric(self) -> bool:
        return len(self.transforms) > 1

    @property
    def is_continuous(self) -> bool:
        return CONTINUOUS in self.kinds

    def stacked(self) -> np.ndarray:
        return np.stack(self.transforms)

    @classmethod
    def identity_only(cls, name="object") -> "SymmetrySet":
        return cls([np.eye(3)], [DISCRETE], name, [0.0])

    def to_json(self) -> dict:
        out = {"object": self.name, "transforms": [np.asarray(T).tolist() for T in self.transforms],
               "kinds": list(self.kinds)}
        if self.continuous_axis is not None:
            out["continuous_axis"] = np.asarray(self.continuous_axis).tolist()
        return out

    @classmethod
    def from_json(cls, d) -> "SymmetrySet":
        axis = d.get("continuous_axis")
        return cls([np.asarray(T, dtype=np.float64) for T in d["transforms"]], list(d["kinds"]),
                   d.get("object", "object"),
                   continuous_axis=None if axis is None else np.asarray(axis))


class _Residual:
    """Closest-point residual of a mesh against a transformed copy of itself."""

    def __init__(self, mesh: Mesh):
        self.center = mesh.centroid
        self.queries = mesh.surface_samples - self.center
        self.tree = cKDTree(mesh.reference_samples - self.center)
        self.diameter = mesh.diameter

    def __call__(self, T, subset=None) -> float:
        q = self.queries if subset is None else self.queries[subset]
        # distance to the nearest point of T(ref) equals distance of T^-1 q to ref
        d, _ = self.tree.query(q @ np.linalg.inv(T).T)
        return float(d.mean())

    def _build_field(self, n=64):
        L = 1.02 * np.linalg.norm(self.queries, axis=1).max()
        g = np.linspace(-L, L, n)
        nodes = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        d, _ = self.tree.query(nodes)
        self._field = (d.reshape(n, n, n), L, n)

    def smooth(self, T, subset=None) -> float:
        """Trilinear distance-field version of ``__call__`` used during descent."""
        if getattr(self, "_field", None) is None:
            self._build_field()
        D, L, n = self._field
        q = self.queries if subset is None else self.queries[subset]
        c = (q @ np.linalg.inv(T).T + L) * ((n - 1) / (2 * L))
        return float(ndimage.map_coordinates(D, c.T, order=1, mode="nearest").mean())


_evaluators: "weakref.WeakKeyDictionary[Mesh, _Residual]" = weakref.WeakKeyDictionary()


def _evaluator(mesh: Mesh) -> _Residual:
    ev = _evaluators.get(mesh)
    if ev is None:
        ev = _evaluators[mesh] = _Residual(mesh)
    return ev


def adds_objective(mesh: Mesh, transform) -> float:
    """Mean distance from each surface sample to the nearest transformed surface point.

    ``transform`` is a 3x3 (possibly improper) orthogonal matrix applied about
    the surface centroid.
    """
    return _evaluator(mesh)(np.asarray(transform, dtype=np.float64))


def principal_frame(mesh: Mesh) -> np.ndarray:
    """Columns are the principal axes of the surface samples (right-handed)."""
    x = mesh.surface_samples - mesh.centroid
    w, V = np.linalg.eigh(x.T @ x)
    V = V[:, ::-1]
    for i in range(3):
        # deterministic sign: largest-magnitude component positive
        j = np.argmax(np.abs(V[:, i]))
        if V[j, i] < 0:
            V[:, i] = -V[:, i]
    if np.linalg.det(V) < 0:
        V[:, 2] = -V[:, 2]
    return V


def cube_directions() -> np.ndarray:
    """The 26 face, edge and corner directions of a cube (unit vectors)."""
    dirs = [d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)]
    dirs = np.asarray(dirs, dtype=np.float64)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def seed_grid(mesh: Mesh, angles_deg=SEED_ANGLES_DEG):
    """(axis, angle) seeds in the object frame; duplicate half-turns dropped."""
    frame = principal_frame(mesh)
    seeds = []
    for d in cube_directions():
        axis = frame @ d
        for ang in angles_deg:
            if ang == 180.0 and _first_nonzero(d) < 0:
                continue  # half-turn about -a equals half-turn about a
            seeds.append((axis, np.deg2rad(ang)))
    return seeds


def _first_nonzero(d):
    return d[np.flatnonzero(np.abs(d) > 1e-12)[0]]


def _tangent_basis(a):
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1)


def optimize_candidate(mesh: Mesh, axis, angle, config: DiscoveryConfig, subset=None,
                       optimize_angle=True, exact=False, max_iter=None) -> SymmetryCandidate:
    """Gradient descent with central differences on (axis tilt u, v, angle).

    The descent runs on a trilinear distance field unless ``exact`` is set,
    in which case the KD-tree residual itself is minimized (used for polishing).
    """
    ev = _evaluator(mesh)
    a0 = np.asarray(axis, dtype=np.float64)
    a0 = a0 / np.linalg.norm(a0)
    e1, e2 = _tangent_basis(a0)
    diam = ev.diameter
    tau = config.tau_frac * diam

    def unpack(p):
        ax = a0 + p[0] * e1 + p[1] * e2
        return ax / np.linalg.norm(ax), p[2]

    def f(p):
        ax, th = unpack(p)
        return objective(axis_angle(ax, th), subset) / diam

    objective = ev.__call__ if exact else ev.smooth

    n_par = 3 if optimize_angle else 2
    p = np.array([0.0, 0.0, float(angle)])
    fp = f(p)
    step = config.step
    h = config.fd_step
    for it in range(config.max_iter if max_iter is None else max_iter):
        g = np.zeros(3)
        for i in range(n_par):
            dp = np.zeros(3)
            dp[i] = h
            g[i] = (f(p + dp) - f(p - dp)) / (2 * h)
        moved = False
        while step > 1e-9:
            trial = p - step * g
            ft = f(trial)
            if ft < fp:
                moved = True
                break
            step *= config.decay
        if not moved:
            break
        delta = (fp - ft) * diam
        p, fp = trial, ft
        if delta < config.converge_tol:
            break
        if it + 1 >= config.abort_after and fp * diam > config.abort_factor * tau:
            break
    ax, th = unpack(p)
    th = float(np.mod(th, 2 * np.pi))
    return SymmetryCandidate(ax, th, ev(axis_angle(ax, th)))


def _snap_angle(theta, tol):
    for n in range(2, 9):
        step = 2 * np.pi / n
        m = round(theta / step)
        if m % n and abs(theta - m * step) < tol:
            return m * step
    return theta


def _canonical(axis, angle):
    """Axis/angle with angle in (0, pi]; half-turn axes sign-normalized."""
    angle = float(np.mod(angle, 2 * np.pi))
    axis = np.asarray(axis, dtype=np.float64)
    if angle > np.pi:
        angle, axis = 2 * np.pi - angle, -axis
    if abs(angle - np.pi) < 1e-12 and axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis, angle


def matrix_axis_angle(R):
    """Axis and angle in [0, pi] of a rotation matrix."""
    angle = rotation_angle(R)
    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), 0.0
    if np.pi - angle < 1e-6:
        M = (R + np.eye(3)) / 2.0
        axis = M[np.argmax(np.diag(M))]
    else:
        axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return axis / np.linalg.norm(axis), angle


def _dedupe(mats, tol):
    kept = []
    for M in mats:
        if all(rotation_distance(M, K) > tol for K in kept):
            kept.append(M)
    return kept


def reflection_to_rotation_filter(candidates, name="object") -> SymmetrySet:
    """Keep proper rotations only; identity is placed first.

    ``candidates`` is a sequence of (matrix, kind, residual) triples.
    """
    transforms, kinds, residuals = [np.eye(3)], [DISCRETE], [0.0]
    for M, kind, res in candidates:
        M = np.asarray(M, dtype=np.float64)
        if np.linalg.det(M) < 0:
            continue
        if rotation_angle(M) < 1e-3:
            continue
        transforms.append(M)
        kinds.append(DISCRETE if kind == REFLECTION else kind)
        residuals.append(res)
    return SymmetrySet(transforms, kinds, name, residuals)


def discover_symmetries(mesh: Mesh, config: Optional[DiscoveryConfig] = None) -> SymmetrySet:
    config = config or DiscoveryConfig()
    mesh.check_nondegenerate()
    ev = _evaluator(mesh)
    tau = config.tau_frac * ev.diameter
    n_q = len(ev.queries)
    subset = None
    if config.opt_samples and config.opt_samples < n_q:
        subset = np.linspace(0, n_q - 1, config.opt_samples).round().astype(np.int64)

    seeds = seed_grid(mesh, config.angles_deg)

    def run(seed):
        axis, angle = seed
        return optimize_candidate(mesh, axis, angle, config, subset)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]

    passed = []
    for c in sorted(results, key=lambda c: c.residual):
        axis, angle = _canonical(c.axis, c.angle)
        if c.residual >= tau or angle < config.dedupe_tol:
            continue
        M = axis_angle(axis, angle)
        if all(rotation_distance(M, axis_angle(a, t)) > config.dedupe_tol for a, t, _ in passed):
            passed.append((axis, angle, c.residual))
    accepted = []
    for axis, angle, _ in passed:
        c = optimize_candidate(mesh, axis, angle, config, exact=True, max_iter=config.polish_iter)
        axis, angle = _canonical(c.axis, c.angle)
        if c.residual < tau:
            accepted.append((axis, angle, c.residual))
    # merge order must not depend on worker scheduling
    accepted.sort(key=lambda x: (tuple(np.round(x[0], 6)), round(x[1], 6)))

    # continuous symmetry: every test angle about an accepted axis passes
    continuous_axis = None
    tested = []
    for axis, angle, res in sorted(accepted, key=lambda x: x[2]):
        if any(abs(abs(axis @ t) - 1.0) < 1e-3 for t in tested):
            continue
        tested.append(axis)
        angs = 2 * np.pi * np.arange(1, config.n_continuous_test) / config.n_continuous_test
        if all(ev(axis_angle(axis, th)) < tau for th in angs):
            continuous_axis = axis
            break

    candidates = []
    if continuous_axis is not None:
        a = continuous_axis
        family = [axis_angle(a, 2 * np.pi * k / config.n_discretize)
                  for k in range(1, config.n_discretize)]
        candidates += [(M, CONTINUOUS, ev(M)) for M in family]
        flips = [x for x in accepted if abs(x[0] @ a) < 0.1 and abs(x[1] - np.pi) < config.snap_tol]
        if flips:
            axis, _, _ = min(flips, key=lambda x: x[2])
            axis = axis - (axis @ a) * a
            F = axis_angle(axis, np.pi)
            for k in range(config.n_discretize):
                M = F @ axis_angle(a, 2 * np.pi * k / config.n_discretize)
                r = ev(M)
                if r < tau:
                    candidates.append((M, DISCRETE, r))
    else:
        mats = [axis_angle(ax, _snap_angle(an, config.snap_tol)) for ax, an, _ in accepted]
        group = _dedupe(mats, config.dedupe_tol)
        group = _close_group(group, ev, tau, config.dedupe_tol)
        group = _symmetrize_inverses(group, config.dedupe_tol)
        candidates += [(M, DISCRETE, ev(M)) for M in group]

    if config.check_reflections:
        frame = principal_frame(mesh)
        for d in cube_directions():
            if _first_nonzero(d) < 0:
                continue
            n = frame @ d
            M = np.eye(3) - 2.0 * np.outer(n, n)
            r = ev(M)
            if r < tau:
                candidates.append((M, REFLECTION, r))

    out = reflection_to_rotation_filter(candidates, mesh.name)
    out.continuous_axis = continuous_axis
    out.meta = {"tau": tau, "diameter": ev.diameter, "n_seeds": len(seeds)}
    return out


def _close_group(group, ev, tau, tol, max_size=64):
    group = [M for M in group if rotation_angle(M) > tol]
    changed = True
    while changed and len(group) < max_size:
        changed = False
        members = [np.eye(3)] + group
        for A, B in itertools.product(members, repeat=2):
            P = A @ B
            if all(rotation_distance(P, K) > tol for K in members) and ev(P) < tau:
                group.append(P)
                members.append(P)
                changed = True
                if len(group) >= max_size:
                    break
    return group


def _symmetrize_inverses(group, tol):
    out = [M.copy() for M in group]
    for i in range(len(out)):
        inv = out[i].T
        j = min(range(len(out)), key=lambda k: rotation_distance(out[k], inv))
        if rotation_distance(out[j], inv) < tol:
            if j == i:
                ax, _ = matrix_axis_angle(out[i])
                out[i] = axis_angle(ax, np.pi)
            elif j > i:
                out[j] = inv
    return out


def is_symmetry(mesh: Mesh, transform, tau_frac=0.01) -> bool:
    return adds_objective(mesh, transform) < tau_frac * mesh.diameter


def symmetry_variants(keypoints, center, sym: SymmetrySet) -> np.ndarray:
    """Keypoint sets rotated by each symmetry about the object centre: (S, M, 3)."""
    k = np.asarray(keypoints) - center
    return np.einsum("sab,mb->sma", sym.stacked(), k) + center
