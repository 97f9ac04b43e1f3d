"""Hand-crafted per-pixel and per-point inputs standing in for learned encoders.

Pixel features: normalized RGB and pixel coordinates on a strided grid whose
XYZ map is resized with nearest interpolation. Point features: position,
normal, height above the table, and a context descriptor summarizing the
same-coloured neighbourhood of each point (offset to the region centroid,
principal horizontal axes and dominant orientations). The descriptor plays
the role of the encoder's receptive field.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fusion import PixelFeatureMap, PointFeatureMap
from .geometry import ViewFrame, backproject, merge_views, relative_poses

FEATURE_STRIDE = 4
N_POINTS = 1024
ABOVE_TABLE = 0.004       # metres
OBJECT_SHARE = 0.8        # fraction of sampled points drawn from above the table
CONTEXT_RADIUS = 0.25
CHROMA_TOL = 0.06
POS_SCALE = 0.3
OFFSET_SCALE = 0.1

PIXEL_DIM = 5
POINT_DIM = 7 + 22


@dataclass
class SceneFeatures:
    pixels: PixelFeatureMap
    points: PointFeatureMap
    cloud_index: np.ndarray      # index of each sampled point in the merged cloud
    labels: Optional[np.ndarray]
    source_view: np.ndarray

    @property
    def coordinates(self):
        return self.points.coordinates


def depth_normals(depth, intr) -> np.ndarray:
    """Camera-frame normals from central differences of the back-projected map."""
    xyz = backproject(depth, intr)
    valid = depth > 0
    du = np.zeros_like(xyz)
    dv = np.zeros_like(xyz)
    du[:, 1:-1] = xyz[:, 2:] - xyz[:, :-2]
    dv[1:-1] = xyz[2:] - xyz[:-2]
    ok_u = np.zeros_like(valid)
    ok_v = np.zeros_like(valid)
    ok_u[:, 1:-1] = valid[:, 2:] & valid[:, :-2]
    ok_v[1:-1] = valid[2:] & valid[:-2]
    # fall back to one-sided differences at depth edges
    fwd_u = np.zeros_like(xyz)
    fwd_u[:, :-1] = xyz[:, 1:] - xyz[:, :-1]
    ok_fu = np.zeros_like(valid)
    ok_fu[:, :-1] = valid[:, 1:] & valid[:, :-1]
    bwd_u = np.zeros_like(xyz)
    bwd_u[:, 1:] = xyz[:, 1:] - xyz[:, :-1]
    ok_bu = np.zeros_like(valid)
    ok_bu[:, 1:] = valid[:, 1:] & valid[:, :-1]
    du = np.where(ok_u[..., None], du, np.where(ok_fu[..., None], fwd_u, bwd_u))
    fwd_v = np.zeros_like(xyz)
    fwd_v[:-1] = xyz[1:] - xyz[:-1]
    ok_fv = np.zeros_like(valid)
    ok_fv[:-1] = valid[1:] & valid[:-1]
    bwd_v = np.zeros_like(xyz)
    bwd_v[1:] = xyz[1:] - xyz[:-1]
    dv = np.where(ok_v[..., None], dv, np.where(ok_fv[..., None], fwd_v, bwd_v))
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    n[norm[..., 0] == 0] = (0.0, 0.0, -1.0)
    flip = (n * xyz).sum(axis=-1) > 0
    n[flip] = -n[flip]
    return n


def pixel_features(views: Sequence[ViewFrame], stride=FEATURE_STRIDE) -> PixelFeatureMap:
    rels = relative_poses(views)
    feats, xyzs = [], []
    for view, rel in zip(views, rels):
        H, W = view.depth.shape
        rows = np.arange(stride // 2, H, stride)
        cols = np.arange(stride // 2, W, stride)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        rgb = np.asarray(view.rgb, dtype=np.float64)[rr, cc] / 255.0 - 0.5
        uv = np.stack([cc / W - 0.5, rr / H - 0.5], axis=-1)
        feats.append(np.concatenate([rgb, uv], axis=-1))
        xyz = backproject(view.depth, view.intrinsics)[rr, cc]
        xyz = rel.apply(xyz.reshape(-1, 3)).reshape(xyz.shape)
        xyz[view.depth[rr, cc] <= 0] = np.nan
        xyzs.append(xyz)
    return PixelFeatureMap(np.stack(feats), np.stack(xyzs))


def _chromaticity(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    s = rgb.sum(axis=-1, keepdims=True)
    return np.divide(rgb, s, out=np.full_like(rgb, 1 / 3), where=s > 0)


def _unit_angle(z):
    a = np.angle(z)
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


def context_features(world, normals_w, rgb, radius=CONTEXT_RADIUS) -> np.ndarray:
    """Neighbourhood descriptor per point, all in the table frame.

    Columns: centroid offset (3), sqrt horizontal eigenvalues (2), region top
    height (1), anisotropy (1), two-fold axis (2), skew-resolved heading (2),
    four-fold heading (2) and its strength (1), one-fold normal heading (2)
    and its strength (1), log region size (1), on-object flag (1), and the
    heading of the cubic moment mean(|z|^2 z) with its strength (3), where z
    is the horizontal position about the centroid as a complex number.
    """
    n = len(world)
    out = np.zeros((n, 22))
    above = world[:, 2] > ABOVE_TABLE
    chroma = _chromaticity(rgb)
    idx = np.flatnonzero(above)
    if len(idx) == 0:
        return out
    P = world[idx]
    C = chroma[idx]
    Nw = normals_w[idx]
    d2 = ((P[:, None, :] - P[None, :, :]) ** 2).sum(-1)
    c2 = ((C[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    A = (d2 < radius * radius) & (c2 < CHROMA_TOL * CHROMA_TOL)
    cnt = A.sum(axis=1).astype(np.float64)
    cen = (A @ P) / cnt[:, None]
    rel = P[None, :, :] - cen[:, None, :]                       # (q, j, 3)
    w = A.astype(np.float64)
    sxx = (w * rel[..., 0] ** 2).sum(1) / cnt
    syy = (w * rel[..., 1] ** 2).sum(1) / cnt
    sxy = (w * rel[..., 0] * rel[..., 1]).sum(1) / cnt
    tr = sxx + syy
    det_term = np.sqrt(np.maximum(((sxx - syy) / 2) ** 2 + sxy ** 2, 0))
    l1 = np.maximum(tr / 2 + det_term, 0)
    l2 = np.maximum(tr / 2 - det_term, 0)
    two = (sxx - syy) + 2j * sxy
    psi2 = np.angle(two) / 2
    u = np.stack([np.cos(psi2), np.sin(psi2)], axis=-1)
    proj = (rel[..., :2] * u[:, None, :]).sum(-1)
    skew = (w * proj ** 3).sum(1)
    psi1 = np.where(skew < 0, psi2 + np.pi, psi2)
    top = np.where(A, P[None, :, 2], -np.inf).max(axis=1)
    hn = Nw[:, :2]
    hmag = np.linalg.norm(hn, axis=1)
    phi = np.arctan2(hn[:, 1], hn[:, 0])
    m4 = (w * (hmag * np.exp(4j * phi))[None, :]).sum(1)
    m1 = (w * (hmag * np.exp(1j * phi))[None, :]).sum(1)
    hsum = np.maximum((w * hmag[None, :]).sum(1), 1e-9)
    out[idx, 0:3] = (cen - P) / OFFSET_SCALE
    out[idx, 3] = np.sqrt(l1) / OFFSET_SCALE
    out[idx, 4] = np.sqrt(l2) / OFFSET_SCALE
    out[idx, 5] = top / OFFSET_SCALE
    out[idx, 6] = (l1 - l2) / np.maximum(l1 + l2, 1e-12)
    out[idx, 7:9] = np.stack([np.cos(psi2), np.sin(psi2)], axis=-1)
    out[idx, 9:11] = np.stack([np.cos(psi1), np.sin(psi1)], axis=-1)
    psi4 = np.angle(m4) / 4
    out[idx, 11:13] = np.stack([np.cos(psi4), np.sin(psi4)], axis=-1)
    out[idx, 13] = np.abs(m4) / hsum
    out[idx, 14:16] = _unit_angle(m1)
    out[idx, 16] = np.abs(m1) / hsum
    out[idx, 17] = np.log(cnt) / 5.0
    out[idx, 18] = 1.0
    z = rel[..., 0] + 1j * rel[..., 1]
    r2 = (w * np.abs(z) ** 2).sum(1) / cnt
    m21 = (w * np.abs(z) ** 2 * z).sum(1) / cnt
    out[idx, 19:21] = _unit_angle(m21)
    out[idx, 21] = np.abs(m21) / np.maximum(r2, 1e-12) ** 1.5
    return out


def sample_points(world, n, rng) -> np.ndarray:
    """Sorted indices: mostly above-table points, the rest from the table."""
    above = np.flatnonzero(world[:, 2] > ABOVE_TABLE)
    below = np.flatnonzero(world[:, 2] <= ABOVE_TABLE)
    n_above = min(len(above), int(round(OBJECT_SHARE * n)))
    n_below = min(len(below), n - n_above)
    n_above = min(len(above), n - n_below)
    pick = np.concatenate([rng.choice(above, n_above, replace=False) if n_above else above[:0],
                           rng.choice(below, n_below, replace=False) if n_below else below[:0]])
    return np.sort(pick)


def fit_table_plane(points, normal, offset, bands=(0.015, 0.005)):
    """Refine a plane n.x + d = 0 by least squares on the points near it.

    Returns the refined (normal, offset) with the normal kept on the side of
    the initial guess, or the guess itself if too few points support it.
    """
    n, d = np.asarray(normal, dtype=np.float64), float(offset)
    for band in bands:
        near = points[np.abs(points @ n + d) < band]
        if len(near) < 50:
            break
        c = near.mean(axis=0)
        _, _, vt = np.linalg.svd(near - c, full_matrices=False)
        m = vt[2] if vt[2] @ n > 0 else -vt[2]
        n, d = m, -float(m @ c)
    return n, d


def view_heights(view: ViewFrame):
    """Height above the table of each valid pixel, from a plane fitted in this view.

    The annotated camera pose only seeds the fit, so errors in it do not leak
    into the heights. Also returns the plane (normal, offset) in camera coordinates.
    """
    rows, cols = np.nonzero(view.depth > 0)
    pts = backproject(view.depth, view.intrinsics)[rows, cols]
    R, t = view.camera_pose.rotation, view.camera_pose.translation
    n0 = R[2]                      # world up in camera coordinates
    n, d = fit_table_plane(pts, n0, float(t[2]))
    return pts @ n + d, (n, d)


def table_frame(views: Sequence[ViewFrame], plane):
    """Rotation and origin of a table frame expressed in first-camera coordinates.

    z follows the fitted plane normal of view 1; x is the annotated world x
    axis projected into the plane.
    """
    n, d = plane
    cam1 = views[0].camera_pose
    x = cam1.rotation[0] - (cam1.rotation[0] @ n) * n
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    origin_world = -cam1.rotation.T @ cam1.translation     # world origin in camera 1
    origin = origin_world - (origin_world @ n + d) * n
    return np.stack([x, y, n]), origin


def scene_features(views: Sequence[ViewFrame], rng, n_points=N_POINTS,
                   stride=FEATURE_STRIDE) -> SceneFeatures:
    """Merged cloud, sampled points and their raw pixel / point features."""
    cloud = merge_views(views)
    rels = relative_poses(views)
    normals, heights, plane1 = [], [], None
    for k, (view, rel) in enumerate(zip(views, rels)):
        if not (view.depth > 0).any():
            continue
        nmap = depth_normals(view.depth, view.intrinsics)
        rows, cols = np.nonzero(view.depth > 0)
        normals.append(nmap[rows, cols] @ rel.rotation.T)
        h, plane = view_heights(view)
        heights.append(h)
        if k == 0:
            plane1 = plane
    normals = np.concatenate(normals)
    if plane1 is None:
        R0 = views[0].camera_pose.rotation
        plane1 = (R0[2], float(views[0].camera_pose.translation[2]))
    R_t, origin = table_frame(views, plane1)
    world = (cloud.points - origin) @ R_t.T
    world[:, 2] = np.concatenate(heights)
    pick = sample_points(world, n_points, rng)
    pts = cloud.points[pick]
    nrm = normals[pick]
    w = world[pick]
    nw = nrm @ R_t.T
    rgb = np.asarray(cloud.colors, dtype=np.float64)[pick] / 255.0
    base = np.column_stack([pts / POS_SCALE, nrm, w[:, 2:3] / OFFSET_SCALE])
    ctx = context_features(w, nw, rgb)
    feats = np.column_stack([base, ctx])
    labels = None if cloud.labels is None else np.asarray(cloud.labels, dtype=np.int64)[pick]
    return SceneFeatures(pixel_features(views, stride), PointFeatureMap(feats, pts), pick,
                         labels, cloud.source_view[pick])
