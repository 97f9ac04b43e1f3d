"""Training losses with analytic gradients.

All functions return ``(value, grad)`` pairs (plus extra bookkeeping where
noted) so the training loop never needs automatic differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose


@dataclass(frozen=True)
class LossWeights:
    keypoint: float = 2.0
    semantic: float = 1.0
    center: float = 1.0

    def __post_init__(self):
        if min(self.keypoint, self.semantic, self.center) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class InstanceTargets:
    """Targets for the points of one object instance.

    ``variant_offsets[s]`` are the keypoint offsets obtained with the target
    keypoints rotated by symmetry ``s``; variant 0 is the unrotated set.
    """

    indices: np.ndarray
    variant_offsets: np.ndarray   # (S, N_I, M, 3)
    center_offsets: np.ndarray    # (N_I, 3)
    class_id: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) == 0:
            raise ValueError("empty instance")

    @property
    def offsets(self) -> np.ndarray:
        return self.variant_offsets[0]

    @property
    def n_points(self) -> int:
        return len(self.indices)


def instance_targets(points, indices, keypoints, center, pose: Pose, sym_transforms,
                     class_id=0) -> InstanceTargets:
    """Per-symmetry keypoint offsets for the scene points of one object.

    Symmetries rotate the model keypoints about the object centre in the
    object frame before the ground-truth pose maps them to the camera.
    """
    pts = np.asarray(points, dtype=np.float64)[indices]
    k = np.asarray(keypoints, dtype=np.float64) - center
    S = np.asarray(sym_transforms, dtype=np.float64).reshape(-1, 3, 3)
    obj = np.einsum("sab,mb->sma", S, k) + center               # (S, M, 3)
    cam = obj @ pose.rotation.T + pose.translation
    offsets = cam[:, None, :, :] - pts[None, :, None, :]        # (S, N_I, M, 3)
    c_cam = pose.apply(center)
    return InstanceTargets(indices, offsets, c_cam - pts, class_id)


def symmetry_keypoint_loss(pred_offsets, variant_offsets):
    """Mean over points of summed keypoint L2 errors, minimized over symmetries.

    Returns (loss, argmin symmetry index, gradient wrt ``pred_offsets``);
    the gradient follows the selected symmetry only, with ties going to the
    lowest index.
    """
    pred = np.asarray(pred_offsets, dtype=np.float64)
    tgt = np.asarray(variant_offsets, dtype=np.float64)
    if tgt.ndim == pred.ndim:
        tgt = tgt[None]
    n = pred.shape[0]
    if n == 0:
        raise ValueError("empty instance")
    diff = pred[None] - tgt                                     # (S, N, M, 3)
    dist = np.sqrt((diff * diff).sum(axis=-1))                  # (S, N, M)
    per_sym = dist.sum(axis=(1, 2)) / n
    s = int(np.argmin(per_sym))
    d = dist[s][..., None]
    grad = np.divide(diff[s], d * n, out=np.zeros_like(diff[s]), where=d > 0)
    return float(per_sym[s]), s, grad


def plain_keypoint_loss(pred_offsets, offsets):
    loss, _, grad = symmetry_keypoint_loss(pred_offsets, np.asarray(offsets)[None])
    return loss, grad


def center_loss(pred, target):
    """Mean absolute error over points and coordinates."""
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64)
    if diff.size == 0:
        raise ValueError("empty instance")
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def focal_loss(logits, labels, gamma=2.0, alpha=0.25):
    """Mean of -alpha (1 - p_t)^gamma log p_t with softmax probabilities."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    rows = np.arange(n)
    lpt = logp[rows, labels]
    pt = p[rows, labels]
    one_m = 1.0 - pt
    loss = -alpha * one_m ** gamma * lpt
    # d loss / d z_k = A (delta_ky - p_k)
    dpow = np.zeros_like(pt)
    if gamma != 0:
        np.power(one_m, gamma - 1, out=dpow, where=one_m > 0)
        dpow *= gamma
    A = alpha * (dpow * pt * lpt - one_m ** gamma)
    onehot = np.zeros_like(p)
    onehot[rows, labels] = 1.0
    grad = A[:, None] * (onehot - p) / n
    return float(loss.mean()), grad


def multitask_loss(keypoint, semantic, center, weights: LossWeights = LossWeights()) -> float:
    return weights.keypoint * keypoint + weights.semantic * semantic + weights.center * center
