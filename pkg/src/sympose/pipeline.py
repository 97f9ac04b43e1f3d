"""Scene-level pose estimation: features, per-point predictions, voting and fitting."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import io as sio
from .features import SceneFeatures, scene_features
from .fusion import HeadOutputs
from .geometry import Pose
from .keypoints import KeypointModel, select_keypoints
from .mesh import LIBRARY, NUM_CLASSES, library_mesh
from .metrics import add_dash_s, adds_error, quotient_add_error, quotient_rotation_error
from .rng import rng_for
from .scenegen import SceneBundle
from .symmetry import SymmetrySet, discover_symmetries
from .voting import BANDWIDTH, MIN_POINTS, PoseEstimate, assemble_instances, fit_instances


@dataclass
class ClassAssets:
    """Everything the pipeline knows about the object library."""

    keypoints: Dict[int, KeypointModel]
    symmetries: Dict[int, SymmetrySet]

    def model_points(self, class_id) -> np.ndarray:
        return library_mesh(class_id).surface_samples

    def is_symmetric(self, class_id) -> bool:
        return self.symmetries[class_id].is_symmetric

    def to_json(self) -> dict:
        return {"keypoints": {str(c): k.to_json() for c, k in sorted(self.keypoints.items())},
                "symmetries": {str(c): s.to_json() for c, s in sorted(self.symmetries.items())}}

    @classmethod
    def from_json(cls, d) -> "ClassAssets":
        return cls({int(c): KeypointModel.from_json(k) for c, k in d["keypoints"].items()},
                   {int(c): SymmetrySet.from_json(s) for c, s in d["symmetries"].items()})


_ASSET_CACHE: Dict[str, ClassAssets] = {}


def build_assets(classes=None, keypoint_mode="curvature", cache_dir=None) -> ClassAssets:
    """Discover symmetries and select keypoints for the library classes.

    Discovery takes a few seconds per class, so results are memoized in
    process and, if ``cache_dir`` (or SYMPOSE_CACHE) is set, on disk.
    """
    classes = sorted(LIBRARY) if classes is None else sorted(classes)
    key = f"{keypoint_mode}:{','.join(map(str, classes))}"
    if key in _ASSET_CACHE:
        return _ASSET_CACHE[key]
    cache_dir = cache_dir or os.environ.get("SYMPOSE_CACHE")
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"assets_{keypoint_mode}_{'-'.join(map(str, classes))}.json"
        if path.exists():
            assets = ClassAssets.from_json(sio.load_json(path))
            _ASSET_CACHE[key] = assets
            return assets
    kps, syms = {}, {}
    for c in classes:
        mesh = library_mesh(c)
        kps[c] = select_keypoints(mesh, c, keypoint_mode)
        syms[c] = discover_symmetries(mesh)
    assets = ClassAssets(kps, syms)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        sio.dump_json(path, assets.to_json())
    _ASSET_CACHE[key] = assets
    return assets


def oracle_predictor(bundle: SceneBundle, assets: ClassAssets) -> Callable:
    """Per-point predictions built from ground truth: labels and exact offsets."""
    gt = bundle.gt_poses()
    by_class = {c: gt[i] for i, c in enumerate(bundle.object_classes)}

    def predict(feats: SceneFeatures) -> HeadOutputs:
        pts = feats.coordinates
        labels = feats.labels
        M = len(next(iter(assets.keypoints.values())).keypoints)
        kp = np.zeros((len(pts), M, 3))
        cp = np.zeros((len(pts), 3))
        logits = np.full((len(pts), NUM_CLASSES + 1), -10.0)
        for c, pose in by_class.items():
            sel = labels == c
            km = assets.keypoints[c]
            kp[sel] = pose.apply(km.keypoints)[None] - pts[sel, None, :]
            cp[sel] = pose.apply(km.center) - pts[sel]
        known = np.isin(labels, list(by_class))
        lab = np.where(known, labels, 0)
        logits[np.arange(len(pts)), lab] = 10.0
        return HeadOutputs(kp, cp, logits)

    return predict


def estimate_from_predictions(points, out: HeadOutputs, assets: ClassAssets,
                              bandwidth=BANDWIDTH, min_points=MIN_POINTS) -> List[PoseEstimate]:
    labels = np.argmax(out.semantic_logits, axis=1)
    classes = [c for c in np.unique(labels) if c > 0 and c in assets.keypoints]
    try:
        inst = assemble_instances(points, labels, out.keypoint_offsets, out.center_offsets,
                                  bandwidth, min_points, classes=[int(c) for c in classes])
    except ValueError:
        return []
    return fit_instances(inst, assets.keypoints)


def estimate_scene(views, assets: ClassAssets, predictor: Callable, seed=0, scene_id=0,
                   bandwidth=BANDWIDTH, min_points=MIN_POINTS, n_points=None) -> List[PoseEstimate]:
    """Pose estimates (first-camera frame), one per detected class, sorted by class."""
    kw = {} if n_points is None else {"n_points": n_points}
    feats = scene_features(views, rng_for(seed, "points", scene_id), **kw)
    out = predictor(feats)
    return estimate_from_predictions(feats.coordinates, out, assets, bandwidth, min_points)


@dataclass
class ObjectResult:
    scene_id: int
    class_id: int
    detected: bool
    adds: float
    add_s: float
    qadd: float          # ADD minimized over the symmetry set
    rot_err: float       # quotient rotation error, radians
    trans_err: float


def score_scene(bundle: SceneBundle, estimates: List[PoseEstimate], assets: ClassAssets,
                n_views: Optional[int] = None) -> List[ObjectResult]:
    """Compare estimates with ground truth; missed objects get infinite errors."""
    gt = bundle.gt_poses()
    est = {e.class_id: e.pose for e in estimates}
    rows = []
    for c, g in zip(bundle.object_classes, gt):
        if c not in est:
            rows.append(ObjectResult(bundle.scene_id, c, False, np.inf, np.inf, np.inf, np.inf, np.inf))
            continue
        p = est[c]
        pts = assets.model_points(c)
        sym = assets.symmetries[c]
        rows.append(ObjectResult(
            bundle.scene_id, c, True, adds_error(p, g, pts),
            add_dash_s(p, g, pts, sym.is_symmetric),
            quotient_add_error(p, g, pts, sym.stacked()),
            quotient_rotation_error(p.rotation, g.rotation, sym.stacked()),
            float(np.linalg.norm(p.translation - g.translation))))
    return rows


def estimates_to_json(scene_id, estimates: List[PoseEstimate]) -> dict:
    return {"scene": int(scene_id), "estimates": [e.to_json() for e in estimates]}


def estimates_from_json(d) -> List[PoseEstimate]:
    out = []
    for e in d["estimates"]:
        out.append(PoseEstimate(int(e["class_id"]), Pose.from_json(e), np.zeros((0, 3)),
                                int(e.get("inlier_count", 0)), float(e["residual"])))
    return out
