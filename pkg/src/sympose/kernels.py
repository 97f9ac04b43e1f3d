"""Hot-loop kernels with a compiled backend and a NumPy fallback.

The compiled extension is used when it imports; set ``SYMPOSE_PURE=1`` to
force the fallback. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _pure

if os.environ.get("SYMPOSE_PURE", "") not in ("", "0"):
    _impl = _pure
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pure
        BACKEND = "python"


def knn(queries, targets, k, backend=None):
    """Exact k nearest targets for each query, ties broken by lower index.

    Rows of ``targets`` containing NaN are never returned.
    """
    impl = _select(backend)
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    t = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1, 3)
    return impl.knn(q, t, int(k))


def closest_distances(queries, targets, backend=None):
    """Distance from every query to its nearest target."""
    impl = _select(backend)
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    t = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1, 3)
    return impl.closest_distances(q, t)


def rasterize(verts, faces, fx, fy, cx, cy, width, height, backend=None):
    """Z-buffer triangles in camera coordinates; returns (depth, face_id)."""
    impl = _select(backend)
    v = np.ascontiguousarray(verts, dtype=np.float64)
    f = np.ascontiguousarray(faces, dtype=np.int64)
    return impl.rasterize(v, f, float(fx), float(fy), float(cx), float(cy),
                          int(width), int(height))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pure
    if backend == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {backend!r}")
