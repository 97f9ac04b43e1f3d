"""Point/pixel feature fusion across views and the per-point prediction heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import kernels
from .nn import MLP


@dataclass
class PixelFeatureMap:
    """Per-view features (N, H', W', C) and view-1-frame XYZ maps (N, H', W', 3).

    Pixels without valid depth carry NaN in ``xyz``.
    """

    features: np.ndarray
    xyz: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        if self.features.shape[:3] != self.xyz.shape[:3]:
            raise ValueError("feature and xyz maps must share spatial dimensions")

    @property
    def n_views(self):
        return self.features.shape[0]

    @property
    def channels(self):
        return self.features.shape[-1]

    def valid(self) -> np.ndarray:
        return ~np.isnan(self.xyz).any(axis=-1)


@dataclass
class PointFeatureMap:
    features: np.ndarray
    coordinates: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.coordinates = np.asarray(self.coordinates, dtype=np.float64)
        if len(self.features) != len(self.coordinates):
            raise ValueError("features and coordinates disagree in length")


def knn_indices(queries, targets, k: int) -> np.ndarray:
    """Exact Euclidean k-NN; NaN targets are skipped, ties go to the lower index."""
    return kernels.knn(queries, targets, k)


@dataclass
class FusionMLPs:
    point: MLP        # applied to each gathered point feature, then max-pooled
    point_fuse: MLP   # on [pooled point features, pixel features]
    image: MLP        # applied after max-pooling gathered pixel features
    image_fuse: MLP   # on [image features, point features]

    @classmethod
    def build(cls, c_pix, c_pt, width=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(MLP([c_pt, width], "relu", rng), MLP([width + c_pix, width], "relu", rng),
                   MLP([c_pix, width], "relu", rng), MLP([width + c_pt, width], "relu", rng))


def point_to_pixel_fuse(pix: PixelFeatureMap, pts: PointFeatureMap, mlp_p: MLP, mlp_fp: MLP,
                        k: int = 3) -> PixelFeatureMap:
    """Each valid pixel pools its k nearest point features (MLP first, then max).

    Views are handled independently; pixels without depth get zero pooled
    features before the fuse MLP.
    """
    if len(pts.coordinates) == 0:
        raise ValueError("empty point cloud")
    N, H, W, _ = pix.features.shape
    valid = pix.valid()
    pooled = np.zeros((N, H, W, mlp_p.out_dim), dtype=mlp_p.dtype)
    point_feats = mlp_p.forward(pts.features, cache=False)
    for v in range(N):
        q = pix.xyz[v][valid[v]]
        if len(q) == 0:
            continue
        idx = knn_indices(q, pts.coordinates, k)
        pooled[v][valid[v]] = point_feats[idx].max(axis=1)
    fused = mlp_fp.forward(np.concatenate([pooled, pix.features.astype(mlp_p.dtype)], axis=-1),
                           cache=False)
    return PixelFeatureMap(fused, pix.xyz)


def pool_pixels_for_points(pix: PixelFeatureMap, coords, k: int = 3):
    """Max-pool of the k nearest valid pixel features over all views.

    Returns (pooled features, neighbour indices into the flattened pixel set,
    view index of each neighbour).
    """
    valid = pix.valid()
    flat_xyz = pix.xyz[valid]
    if len(flat_xyz) == 0:
        raise ValueError("no valid pixels to fuse")
    flat_feat = pix.features[valid]
    i2v = np.nonzero(valid)[0]
    idx = knn_indices(coords, flat_xyz, k)
    return flat_feat[idx].max(axis=1), idx, i2v[idx]


def pixel_to_point_fuse(pix: PixelFeatureMap, pts: PointFeatureMap, mlp_i: MLP, mlp_fi: MLP,
                        k: int = 3) -> PointFeatureMap:
    """Each point pools its k nearest pixel features (max first, then MLP)."""
    pooled, _, _ = pool_pixels_for_points(pix, pts.coordinates, k)
    img = mlp_i.forward(pooled, cache=False)
    fused = mlp_fi.forward(np.concatenate([img, pts.features.astype(mlp_i.dtype)], axis=-1),
                           cache=False)
    return PointFeatureMap(fused, pts.coordinates)


@dataclass
class HeadOutputs:
    keypoint_offsets: np.ndarray   # (N_p, M, 3)
    center_offsets: np.ndarray     # (N_p, 3)
    semantic_logits: np.ndarray    # (N_p, num_classes + 1)


class Heads:
    """Three 4-layer MLPs: keypoint offsets, centre offsets, class logits.

    Offsets are regressed in units of ``offset_scale`` metres.
    """

    def __init__(self, in_dim, n_keypoints=8, n_classes=7, width=64, rng=None,
                 dtype=np.float64, offset_scale=0.1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_keypoints = n_keypoints
        self.n_classes = n_classes
        self.offset_scale = offset_scale
        hidden = [width] * 3
        self.keypoint = MLP([in_dim, *hidden, 3 * n_keypoints], rng=rng, dtype=dtype)
        self.center = MLP([in_dim, *hidden, 3], rng=rng, dtype=dtype)
        self.semantic = MLP([in_dim, *hidden, n_classes], rng=rng, dtype=dtype)

    @property
    def mlps(self) -> List[MLP]:
        return [self.keypoint, self.center, self.semantic]

    def forward(self, features, cache=True) -> HeadOutputs:
        n = len(features)
        kp = self.keypoint.forward(features, cache) * self.offset_scale
        cp = self.center.forward(features, cache) * self.offset_scale
        sem = self.semantic.forward(features, cache)
        return HeadOutputs(kp.reshape(n, self.n_keypoints, 3), cp, sem)

    __call__ = forward

    def backward(self, d_kp, d_cp, d_sem):
        """Parameter grads for all three heads and the summed input gradient."""
        n = len(d_kp)
        g1, x1 = self.keypoint.backward(np.reshape(d_kp, (n, -1)) * self.offset_scale)
        g2, x2 = self.center.backward(np.asarray(d_cp) * self.offset_scale)
        g3, x3 = self.semantic.backward(d_sem)
        return g1 + g2 + g3, x1 + x2 + x3


def heads_forward(heads: Heads, features) -> HeadOutputs:
    return heads.forward(features)
