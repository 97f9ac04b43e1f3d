"""The trainable network, its training loop and the model file format.

The point-to-pixel branch is kept at its seeded random initialization, so
its pooled output can be computed once per scene and cached. Training
updates the pixel-to-point MLPs and the three heads.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .features import PIXEL_DIM, POINT_DIM, SceneFeatures, scene_features
from .fusion import HeadOutputs, Heads, point_to_pixel_fuse, pool_pixels_for_points
from .losses import (InstanceTargets, LossWeights, center_loss, focal_loss, instance_targets,
                     multitask_loss, symmetry_keypoint_loss)
from .mesh import NUM_CLASSES
from .nn import MLP, SGD
from .rng import rng_for

MAGIC = b"SYMPOSE-MODEL\x00\x01\x00"


@dataclass
class TrainConfig:
    epochs: int = 12
    lr: float = 1e-2
    momentum: float = 0.9
    clip: float = 5.0
    width: int = 64
    fuse_width: int = 32
    k_p: int = 3
    k_i: int = 3
    points_per_step: int = 512
    symmetry_aware: bool = True
    seed: int = 0
    weights: tuple = (2.0, 1.0, 1.0)
    gamma: float = 2.0
    alpha: float = 0.25
    lr_decay_at: float = 0.7     # fraction of training after which lr drops tenfold

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid training configuration")
        self.weights = tuple(float(w) for w in self.weights)


class PoseNet:
    def __init__(self, width=64, fuse_width=32, n_keypoints=8, seed=0, k_p=3, k_i=3,
                 dtype=np.float32, backbone_seed=0):
        self.width, self.fuse_width, self.seed = width, fuse_width, seed
        self.k_p, self.k_i = k_p, k_i
        self.n_keypoints = n_keypoints
        self.backbone_seed = backbone_seed
        # the frozen branch has its own seed so cached features can be shared
        # between networks trained with different seeds
        frozen_rng = rng_for(backbone_seed, "model.frozen", 0)
        rng = rng_for(seed, "model.init", 0)
        f = fuse_width
        self.mlp_p = MLP([POINT_DIM, f], "relu", frozen_rng)
        self.mlp_fp = MLP([f + PIXEL_DIM, f], "relu", frozen_rng)
        self.mlp_i = MLP([f, f], "relu", rng, dtype=dtype)
        self.mlp_fi = MLP([f + POINT_DIM, width], "relu", rng, dtype=dtype)
        self.heads = Heads(width, n_keypoints, NUM_CLASSES + 1, width, rng, dtype=dtype)

    @property
    def trainable(self) -> List[MLP]:
        return [self.mlp_i, self.mlp_fi, *self.heads.mlps]

    @property
    def all_mlps(self) -> Dict[str, MLP]:
        return {"mlp_p": self.mlp_p, "mlp_fp": self.mlp_fp, "mlp_i": self.mlp_i,
                "mlp_fi": self.mlp_fi, "head_keypoint": self.heads.keypoint,
                "head_center": self.heads.center, "head_semantic": self.heads.semantic}

    def params(self):
        out = []
        for m in self.trainable:
            out += m.params()
        return out

    def pooled_pixels(self, feats: SceneFeatures) -> np.ndarray:
        """Frozen half of the fusion: point->pixel then pooling back to points."""
        fused = point_to_pixel_fuse(feats.pixels, feats.points, self.mlp_p, self.mlp_fp, self.k_p)
        pooled, _, _ = pool_pixels_for_points(fused, feats.coordinates, self.k_i)
        return pooled

    def forward(self, pooled, point_feats, cache=True) -> HeadOutputs:
        img = self.mlp_i.forward(pooled, cache)
        h = self.mlp_fi.forward(np.concatenate([img, point_feats.astype(img.dtype)], axis=1),
                                cache)
        return self.heads.forward(h, cache)

    def backward(self, d_kp, d_cp, d_sem):
        g_heads, d_h = self.heads.backward(d_kp, d_cp, d_sem)
        g_fi, d_cat = self.mlp_fi.backward(d_h)
        g_i, _ = self.mlp_i.backward(d_cat[:, :self.fuse_width])
        return g_i + g_fi + g_heads

    def predict(self, feats: SceneFeatures, pooled=None) -> HeadOutputs:
        if pooled is None:
            pooled = self.pooled_pixels(feats)
        out = self.forward(pooled, feats.points.features, cache=False)
        return HeadOutputs(out.keypoint_offsets.astype(np.float64),
                           out.center_offsets.astype(np.float64),
                           out.semantic_logits.astype(np.float64))

    __call__ = predict

    # serialization: magic, uint64 manifest length, JSON manifest, float64 blob

    def save(self, path, extra: Optional[dict] = None):
        layers, blobs, offset = {}, [], 0
        for name, m in self.all_mlps.items():
            entries = []
            for p in m.params():
                a = np.ascontiguousarray(p, dtype="<f8")
                entries.append({"shape": list(a.shape), "offset": offset})
                offset += a.size
                blobs.append(a.ravel())
            layers[name] = {**m.manifest(), "params": entries}
        manifest = {"format": 1, "width": self.width, "fuse_width": self.fuse_width,
                    "n_keypoints": self.n_keypoints, "seed": self.seed,
                    "backbone_seed": self.backbone_seed, "k_p": self.k_p,
                    "k_i": self.k_i, "point_dim": POINT_DIM, "pixel_dim": PIXEL_DIM,
                    "layers": layers, "extra": extra or {}}
        head = json.dumps(manifest, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(np.concatenate(blobs).tobytes())

    @classmethod
    def load(cls, path) -> "PoseNet":
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path} is not a sympose model file")
        pos = len(MAGIC)
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        man = json.loads(data[pos:pos + n])
        if man.get("point_dim") != POINT_DIM or man.get("pixel_dim") != PIXEL_DIM:
            raise ValueError("model was trained with a different feature layout")
        flat = np.frombuffer(data, dtype="<f8", offset=pos + n)
        net = cls(man["width"], man["fuse_width"], man["n_keypoints"], man["seed"],
                  man["k_p"], man["k_i"], backbone_seed=man.get("backbone_seed", 0))
        for name, m in net.all_mlps.items():
            spec = man["layers"][name]
            params = [flat[e["offset"]:e["offset"] + int(np.prod(e["shape"]))]
                      .reshape(e["shape"]).astype(m.dtype) for e in spec["params"]]
            m.set_params(params)
        net.manifest = man
        return net


@dataclass
class TrainingSample:
    scene_id: int
    pooled: np.ndarray
    point_feats: np.ndarray
    labels: np.ndarray
    instances: List[InstanceTargets]


def make_sample(bundle, net: PoseNet, assets, seed=0, symmetry_aware=True,
                feats: Optional[SceneFeatures] = None, pooled=None) -> TrainingSample:
    """Cached frozen-branch features and per-instance targets for one scene.

    ``feats`` and ``pooled`` may be passed in when several samples (for
    example symmetry-aware and plain targets) share one scene.
    """
    if feats is None:
        feats = scene_features(bundle.views, rng_for(seed, "points", bundle.scene_id))
    if pooled is None:
        pooled = net.pooled_pixels(feats)
    pts = feats.coordinates
    labels = feats.labels.astype(np.int64)
    gt = bundle.gt_poses()
    instances = []
    for c, pose in zip(bundle.object_classes, gt):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            continue
        km = assets.keypoints[c]
        syms = assets.symmetries[c].stacked() if symmetry_aware else np.eye(3)[None]
        instances.append(instance_targets(pts, idx, km.keypoints, km.center, pose, syms, c))
    return TrainingSample(bundle.scene_id, np.asarray(pooled, dtype=np.float32),
                          feats.points.features.astype(np.float32), labels, instances)


def _subsample(sample: TrainingSample, n, rng) -> TrainingSample:
    if len(sample.labels) <= n:
        return sample
    keep = np.sort(rng.choice(len(sample.labels), n, replace=False))
    remap = np.full(len(sample.labels), -1)
    remap[keep] = np.arange(n)
    inst = []
    for t in sample.instances:
        sel = remap[t.indices] >= 0
        if sel.any():
            inst.append(InstanceTargets(remap[t.indices[sel]], t.variant_offsets[:, sel],
                                        t.center_offsets[sel], t.class_id))
    return TrainingSample(sample.scene_id, sample.pooled[keep], sample.point_feats[keep],
                          sample.labels[keep], inst)


def step_loss(net: PoseNet, s: TrainingSample, cfg: TrainConfig, backward=True):
    """Forward, losses and (optionally) parameter gradients for one scene."""
    out = net.forward(s.pooled, s.point_feats, cache=backward)
    n, M = len(s.labels), net.n_keypoints
    d_kp = np.zeros((n, M, 3))
    d_cp = np.zeros((n, 3))
    l_kp = l_cp = 0.0
    n_inst = max(len(s.instances), 1)
    kp = out.keypoint_offsets.astype(np.float64)
    cp = out.center_offsets.astype(np.float64)
    for t in s.instances:
        lk, _, gk = symmetry_keypoint_loss(kp[t.indices], t.variant_offsets)
        lc, gc = center_loss(cp[t.indices], t.center_offsets)
        l_kp += lk / n_inst
        l_cp += lc / n_inst
        d_kp[t.indices] += gk / n_inst
        d_cp[t.indices] += gc / n_inst
    l_sem, d_sem = focal_loss(out.semantic_logits, s.labels, cfg.gamma, cfg.alpha)
    w = LossWeights(*cfg.weights)
    total = multitask_loss(l_kp, l_sem, l_cp, w)
    grads = None
    if backward:
        grads = net.backward(w.keypoint * d_kp, w.center * d_cp, w.semantic * d_sem)
    return (l_kp, l_sem, l_cp, total), grads


def train(samples: Sequence[TrainingSample], cfg: TrainConfig, net: Optional[PoseNet] = None,
          log_path=None, progress=None) -> PoseNet:
    """SGD with momentum over scenes in a seeded shuffled order, one scene per step."""
    if net is None:
        net = PoseNet(cfg.width, cfg.fuse_width, seed=cfg.seed, k_p=cfg.k_p, k_i=cfg.k_i)
    opt = SGD(net.params(), cfg.lr, cfg.momentum, cfg.clip)
    log_rows = []
    decay_epoch = int(np.ceil(cfg.lr_decay_at * cfg.epochs))
    for epoch in range(cfg.epochs):
        if epoch == decay_epoch and decay_epoch > 0:
            opt.lr = cfg.lr * 0.1
        rng = rng_for(cfg.seed, "train.epoch", epoch)
        order = rng.permutation(len(samples))
        sums = np.zeros(4)
        for i in order:
            s = _subsample(samples[i], cfg.points_per_step, rng)
            losses, grads = step_loss(net, s, cfg)
            opt.step([g.astype(p.dtype) for g, p in zip(grads, opt.params)])
            sums += losses
        mean = sums / max(len(samples), 1)
        log_rows.append((epoch, *mean))
        if progress:
            progress(epoch, mean)
    if log_path is not None:
        write_training_log(log_path, log_rows)
    net.training_log = log_rows
    return net


def write_training_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_kp", "L_semantic", "L_cp", "L_total"])
        for r in rows:
            w.writerow([r[0]] + [f"{v:.8f}" for v in r[1:]])
