# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: exact KNN, closest-point distances, triangle z-buffer.

Every routine here has a NumPy twin in ``_pure`` with identical semantics;
``sympose.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isnan, INFINITY, floor, ceil

cnp.import_array()


def knn(double[:, ::1] queries, double[:, ::1] targets, int k):
    cdef Py_ssize_t nq = queries.shape[0], nt = targets.shape[0]
    cdef Py_ssize_t i, j, p, n_valid = 0
    cdef double qx, qy, qz, dx, dy, dz, d
    for j in range(nt):
        if not (isnan(targets[j, 0]) or isnan(targets[j, 1]) or isnan(targets[j, 2])):
            n_valid += 1
    if k < 1 or n_valid < k:
        raise ValueError(f"need at least k={k} valid targets, got {n_valid}")
    out = np.empty((nq, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] idx = out
    best_d_arr = np.empty(k, dtype=np.float64)
    best_i_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] best_d = best_d_arr
    cdef cnp.int64_t[::1] best_i = best_i_arr
    cdef Py_ssize_t filled
    for i in range(nq):
        qx = queries[i, 0]; qy = queries[i, 1]; qz = queries[i, 2]
        filled = 0
        for j in range(nt):
            dx = qx - targets[j, 0]
            dy = qy - targets[j, 1]
            dz = qz - targets[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if isnan(d):
                continue
            if filled == k and d >= best_d[k - 1]:
                continue
            # insertion keeps (distance, index) order; later index loses ties
            p = filled if filled < k else k - 1
            while p > 0 and best_d[p - 1] > d:
                if p < k:
                    best_d[p] = best_d[p - 1]
                    best_i[p] = best_i[p - 1]
                p -= 1
            best_d[p] = d
            best_i[p] = j
            if filled < k:
                filled += 1
        for p in range(k):
            idx[i, p] = best_i[p]
    return out


def closest_distances(double[:, ::1] queries, double[:, ::1] targets):
    cdef Py_ssize_t nq = queries.shape[0], nt = targets.shape[0]
    cdef Py_ssize_t i, j
    cdef double qx, qy, qz, dx, dy, dz, d, best
    if nt == 0:
        raise ValueError("empty target set")
    out = np.empty(nq, dtype=np.float64)
    cdef double[::1] res = out
    for i in range(nq):
        qx = queries[i, 0]; qy = queries[i, 1]; qz = queries[i, 2]
        best = INFINITY
        for j in range(nt):
            dx = qx - targets[j, 0]
            dy = qy - targets[j, 1]
            dz = qz - targets[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        res[i] = sqrt(best)
    return out


def rasterize(double[:, ::1] verts, cnp.int64_t[:, ::1] faces, double fx, double fy,
              double cx, double cy, int width, int height, double near=1e-6):
    """Per-pixel nearest triangle along the pixel-centre ray.

    Returns (depth, face_id) with depth 0 and face_id -1 where nothing is hit.
    """
    depth_arr = np.full((height, width), np.inf, dtype=np.float64)
    face_arr = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, ::1] depth = depth_arr
    cdef cnp.int64_t[:, ::1] fid = face_arr
    cdef Py_ssize_t f, a, b, c, u, v
    cdef double ax, ay, az, bx, by, bz, cxx, cyy, czz
    cdef double pu0, pv0, pu1, pv1, pu2, pv2
    cdef double nx, ny, nz, num, den, z, rx, ry
    cdef double e0, e1, e2, area
    cdef int umin, umax, vmin, vmax
    for f in range(faces.shape[0]):
        a = faces[f, 0]; b = faces[f, 1]; c = faces[f, 2]
        ax = verts[a, 0]; ay = verts[a, 1]; az = verts[a, 2]
        bx = verts[b, 0]; by = verts[b, 1]; bz = verts[b, 2]
        cxx = verts[c, 0]; cyy = verts[c, 1]; czz = verts[c, 2]
        if az <= near or bz <= near or czz <= near:
            continue
        pu0 = fx * ax / az + cx; pv0 = fy * ay / az + cy
        pu1 = fx * bx / bz + cx; pv1 = fy * by / bz + cy
        pu2 = fx * cxx / czz + cx; pv2 = fy * cyy / czz + cy
        area = (pu1 - pu0) * (pv2 - pv0) - (pv1 - pv0) * (pu2 - pu0)
        if area == 0.0:
            continue
        umin = <int>ceil(min(pu0, min(pu1, pu2)))
        umax = <int>floor(max(pu0, max(pu1, pu2)))
        vmin = <int>ceil(min(pv0, min(pv1, pv2)))
        vmax = <int>floor(max(pv0, max(pv1, pv2)))
        if umin < 0: umin = 0
        if vmin < 0: vmin = 0
        if umax > width - 1: umax = width - 1
        if vmax > height - 1: vmax = height - 1
        if umin > umax or vmin > vmax:
            continue
        nx = (by - ay) * (czz - az) - (bz - az) * (cyy - ay)
        ny = (bz - az) * (cxx - ax) - (bx - ax) * (czz - az)
        nz = (bx - ax) * (cyy - ay) - (by - ay) * (cxx - ax)
        num = nx * ax + ny * ay + nz * az
        for v in range(vmin, vmax + 1):
            ry = (v - cy) / fy
            for u in range(umin, umax + 1):
                e0 = (pu2 - pu1) * (v - pv1) - (pv2 - pv1) * (u - pu1)
                e1 = (pu0 - pu2) * (v - pv2) - (pv0 - pv2) * (u - pu2)
                e2 = (pu1 - pu0) * (v - pv0) - (pv1 - pv0) * (u - pu0)
                if area > 0:
                    if e0 < 0 or e1 < 0 or e2 < 0:
                        continue
                else:
                    if e0 > 0 or e1 > 0 or e2 > 0:
                        continue
                rx = (u - cx) / fx
                den = nx * rx + ny * ry + nz
                if den == 0.0:
                    continue
                z = num / den
                if z > near and z < depth[v, u]:
                    depth[v, u] = z
                    fid[v, u] = f
    depth_arr[face_arr < 0] = 0.0
    return depth_arr, face_arr
