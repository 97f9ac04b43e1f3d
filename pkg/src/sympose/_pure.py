"""NumPy fallbacks for the compiled kernels in ``_core``.

Semantics match the compiled versions exactly: same distance expression,
same tie-breaking, same rasterization rule.
"""
import numpy as np

_CHUNK = 512


def _sqdist(queries, targets):
    dx = queries[:, None, 0] - targets[None, :, 0]
    dy = queries[:, None, 1] - targets[None, :, 1]
    dz = queries[:, None, 2] - targets[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def knn(queries, targets, k):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    n_valid = int((~np.isnan(targets).any(axis=1)).sum())
    if k < 1 or n_valid < k:
        raise ValueError(f"need at least k={k} valid targets, got {n_valid}")
    out = np.empty((len(queries), k), dtype=np.int64)
    for s in range(0, len(queries), _CHUNK):
        d = _sqdist(queries[s:s + _CHUNK], targets)
        d[np.isnan(d)] = np.inf
        if k < d.shape[1]:
            # partition first, then a stable sort on the (distance, index) keys
            part = np.argpartition(d, k - 1, axis=1)[:, :k]
            kth = np.take_along_axis(d, part, axis=1).max(axis=1, keepdims=True)
            for r in range(d.shape[0]):
                cand = np.flatnonzero(d[r] <= kth[r])
                order = np.lexsort((cand, d[r, cand]))
                out[s + r] = cand[order[:k]]
        else:
            out[s:s + _CHUNK] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def closest_distances(queries, targets):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if len(targets) == 0:
        raise ValueError("empty target set")
    out = np.empty(len(queries))
    for s in range(0, len(queries), _CHUNK):
        out[s:s + _CHUNK] = np.sqrt(_sqdist(queries[s:s + _CHUNK], targets).min(axis=1))
    return out


def rasterize(verts, faces, fx, fy, cx, cy, width, height, near=1e-6):
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    depth = np.full((height, width), np.inf)
    fid = np.full((height, width), -1, dtype=np.int64)
    for f, (a, b, c) in enumerate(faces):
        A, B, C = verts[a], verts[b], verts[c]
        if A[2] <= near or B[2] <= near or C[2] <= near:
            continue
        pu0, pv0 = fx * A[0] / A[2] + cx, fy * A[1] / A[2] + cy
        pu1, pv1 = fx * B[0] / B[2] + cx, fy * B[1] / B[2] + cy
        pu2, pv2 = fx * C[0] / C[2] + cx, fy * C[1] / C[2] + cy
        area = (pu1 - pu0) * (pv2 - pv0) - (pv1 - pv0) * (pu2 - pu0)
        if area == 0.0:
            continue
        umin = max(int(np.ceil(min(pu0, pu1, pu2))), 0)
        umax = min(int(np.floor(max(pu0, pu1, pu2))), width - 1)
        vmin = max(int(np.ceil(min(pv0, pv1, pv2))), 0)
        vmax = min(int(np.floor(max(pv0, pv1, pv2))), height - 1)
        if umin > umax or vmin > vmax:
            continue
        nx = (B[1] - A[1]) * (C[2] - A[2]) - (B[2] - A[2]) * (C[1] - A[1])
        ny = (B[2] - A[2]) * (C[0] - A[0]) - (B[0] - A[0]) * (C[2] - A[2])
        nz = (B[0] - A[0]) * (C[1] - A[1]) - (B[1] - A[1]) * (C[0] - A[0])
        num = nx * A[0] + ny * A[1] + nz * A[2]
        v, u = np.mgrid[vmin:vmax + 1, umin:umax + 1].astype(np.float64)
        e0 = (pu2 - pu1) * (v - pv1) - (pv2 - pv1) * (u - pu1)
        e1 = (pu0 - pu2) * (v - pv2) - (pv0 - pv2) * (u - pu2)
        e2 = (pu1 - pu0) * (v - pv0) - (pv1 - pv0) * (u - pu0)
        if area > 0:
            inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        else:
            inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
        rx = (u - cx) / fx
        ry = (v - cy) / fy
        den = nx * rx + ny * ry + nz
        with np.errstate(divide="ignore", invalid="ignore"):
            z = num / den
        win = depth[vmin:vmax + 1, umin:umax + 1]
        hit = inside & (den != 0.0) & (z > near) & (z < win)
        win[hit] = z[hit]
        fid[vmin:vmax + 1, umin:umax + 1][hit] = f
    depth[fid < 0] = 0.0
    return depth, fid
