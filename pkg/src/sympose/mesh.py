"""Triangle meshes, surface sampling, and the parametric object library."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.distance import pdist

N_SURFACE_SAMPLES = 2048
N_REFERENCE_SAMPLES = 40960
SAMPLE_SEED = 0


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    name: str = "mesh"
    sample_seed: int = SAMPLE_SEED
    n_samples: int = N_SURFACE_SAMPLES
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) == 0:
            raise ValueError("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self._face_cross
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    @property
    def _face_cross(self):
        v = self.vertices[self.faces]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    @cached_property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def centroid(self) -> np.ndarray:
        """Area-weighted surface centroid (the limit of uniform surface sampling)."""
        tri_c = self.vertices[self.faces].mean(axis=1)
        return (self.face_areas[:, None] * tri_c).sum(axis=0) / self.area

    @cached_property
    def diameter(self) -> float:
        return float(pdist(self.vertices).max())

    def sample(self, n: int, seed: int):
        """Area-weighted uniform surface samples and the face each came from."""
        rng = np.random.default_rng(seed)
        p = self.face_areas / self.area
        fidx = rng.choice(len(self.faces), size=n, p=p)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        tri = self.vertices[self.faces[fidx]]
        pts = ((1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1]
               + (r1 * r2)[:, None] * tri[:, 2])
        return pts, fidx

    @cached_property
    def _samples(self):
        return self.sample(self.n_samples, self.sample_seed)

    @property
    def surface_samples(self) -> np.ndarray:
        return self._samples[0]

    @property
    def sample_normals(self) -> np.ndarray:
        return self.face_normals[self._samples[1]]

    @cached_property
    def reference_samples(self) -> np.ndarray:
        """Dense samples used as the closest-point target set."""
        return self.sample(N_REFERENCE_SAMPLES, self.sample_seed + 1)[0]

    def transformed(self, R, t=(0.0, 0.0, 0.0), name=None) -> "Mesh":
        v = self.vertices @ np.asarray(R).T + np.asarray(t)
        return Mesh(v, self.faces.copy(), name or self.name, self.sample_seed,
                    self.n_samples, dict(self.meta))

    def check_nondegenerate(self):
        spread = self.surface_samples - self.surface_samples.mean(axis=0)
        sv = np.linalg.svd(spread, compute_uv=False)
        if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
            raise ValueError("degenerate mesh: point spread has rank < 3")


def _extrude(outline, height, caps="both"):
    """Prism over a counter-clockwise 2D outline, z in [-h/2, h/2]."""
    outline = np.asarray(outline, dtype=np.float64)
    n = len(outline)
    bottom = np.column_stack([outline, np.full(n, -height / 2)])
    top = np.column_stack([outline, np.full(n, height / 2)])
    verts = [bottom, top]
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, j, n + j], [i, n + j, n + i]]
    if caps in ("both", "bottom"):
        faces += [[0, i + 1, i] for i in range(1, n - 1)]
    if caps in ("both", "top"):
        faces += [[n, n + i, n + i + 1] for i in range(1, n - 1)]
    return np.vstack(verts), np.asarray(faces)


def _disc_outline(radius, segments):
    ang = 2 * np.pi * np.arange(segments) / segments
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def cuboid(dx, dy, dz, name="cuboid") -> Mesh:
    out = [[-dx / 2, -dy / 2], [dx / 2, -dy / 2], [dx / 2, dy / 2], [-dx / 2, dy / 2]]
    return Mesh(*_extrude(out, dz), name=name, meta={"kind": "cuboid", "dims": [dx, dy, dz]})


def cylinder(radius, height, segments=64, caps="both", name="cylinder") -> Mesh:
    """Polygonal cylinder about z; ``caps`` in {"both", "bottom", "top", "none"}."""
    if caps == "both":
        v, f = _extrude(_disc_outline(radius, segments), height, "none")
        v, f = _add_fan_caps(v, f, segments, height, which=("bottom", "top"))
    elif caps in ("bottom", "top"):
        v, f = _extrude(_disc_outline(radius, segments), height, "none")
        v, f = _add_fan_caps(v, f, segments, height, which=(caps,))
    else:
        v, f = _extrude(_disc_outline(radius, segments), height, "none")
    return Mesh(v, f, name=name, meta={"kind": "cylinder", "radius": radius,
                                       "height": height, "caps": caps})


def _add_fan_caps(v, f, n, height, which):
    # centre-fan caps keep the triangulation rotation-symmetric
    v = list(v)
    f = [list(x) for x in f]
    if "bottom" in which:
        c = len(v)
        v.append([0.0, 0.0, -height / 2])
        f += [[c, (i + 1) % n, i] for i in range(n)]
    if "top" in which:
        c = len(v)
        v.append([0.0, 0.0, height / 2])
        f += [[c, n + i, n + (i + 1) % n] for i in range(n)]
    return np.asarray(v), np.asarray(f)


def l_clamp(leg, width, height, name="l_clamp") -> Mesh:
    """Equal-legged L profile extruded along z; centred on its bounding box."""
    out = np.array([[0, 0], [leg, 0], [leg, width], [width, width], [width, leg], [0, leg]],
                   dtype=np.float64) - leg / 2
    return Mesh(*_extrude(out, height), name=name, meta={"kind": "l_clamp"})


def tetrahedron(vertices=None, name="tetrahedron") -> Mesh:
    if vertices is None:
        vertices = [[0.0, 0.0, 0.0], [0.11, 0.0, 0.0], [0.03, 0.08, 0.0], [0.045, 0.025, 0.065]]
    v = np.asarray(vertices, dtype=np.float64)
    v = v - v.mean(axis=0)
    faces = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]])
    return Mesh(v, faces, name=name, meta={"kind": "tetrahedron"})


def wedge(triangle=None, depth=0.06, name="wedge") -> Mesh:
    """Scalene triangle extruded along z: one mirror plane, no proper rotations."""
    if triangle is None:
        triangle = [[0.0, 0.0], [0.12, 0.0], [0.035, 0.07]]
    tri = np.asarray(triangle, dtype=np.float64)
    tri = tri - tri.mean(axis=0)
    return Mesh(*_extrude(tri, depth), name=name, meta={"kind": "wedge"})


def sphere(radius, subdivisions=3, name="sphere") -> Mesh:
    t = (1 + 5 ** 0.5) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t], [0, -1, -t],
         [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    v = [np.asarray(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache, nf = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return Mesh(np.asarray(v) * radius, np.asarray(f), name=name, meta={"kind": "sphere"})


# class_id -> (builder, flat RGB colour); class 0 is the table / background
LIBRARY = {
    1: ("cuboid", lambda: cuboid(0.16, 0.09, 0.05, name="cuboid"), (0.85, 0.20, 0.15)),
    2: ("square_prism", lambda: cuboid(0.07, 0.07, 0.12, name="square_prism"), (0.15, 0.65, 0.20)),
    3: ("cylinder", lambda: cylinder(0.04, 0.11, caps="bottom", name="cylinder"), (0.15, 0.30, 0.85)),
    4: ("l_clamp", lambda: l_clamp(0.12, 0.04, 0.04, name="l_clamp"), (0.90, 0.75, 0.10)),
    5: ("tetrahedron", lambda: tetrahedron(name="tetrahedron"), (0.70, 0.20, 0.75)),
    6: ("wedge", lambda: wedge(name="wedge"), (0.10, 0.75, 0.75)),
}
TABLE_COLOR = (0.55, 0.55, 0.55)
NUM_CLASSES = len(LIBRARY)

_cache: dict = {}


def library_mesh(class_id: int) -> Mesh:
    if class_id not in _cache:
        name, build, _ = LIBRARY[class_id]
        _cache[class_id] = build()
    return _cache[class_id]


def class_name(class_id: int) -> str:
    return LIBRARY[class_id][0]


def class_color(class_id: int):
    return TABLE_COLOR if class_id == 0 else LIBRARY[class_id][2]


def class_by_name(name: str) -> int:
    for cid, (n, _, _) in LIBRARY.items():
        if n == name:
            return cid
    raise KeyError(name)
