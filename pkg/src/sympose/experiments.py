"""Desk-scale experiments shared by the CLI and the acceptance suite.

Scene features and the frozen fusion branch are computed once per scene and
reused by every network trained or evaluated on that scene.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .features import SceneFeatures, scene_features
from .model import PoseNet, TrainConfig, TrainingSample, make_sample, train
from .pipeline import (ClassAssets, ObjectResult, estimate_from_predictions, oracle_predictor,
                       score_scene)
from .rng import rng_for
from .scenegen import SceneBundle, SceneSpec, generate_occlusion_scene, generate_scene

BACKBONE_SEED = 0


@dataclass
class PreparedScene:
    bundle: SceneBundle
    feats: SceneFeatures
    pooled: np.ndarray


def _gen(spec):
    return generate_scene(spec)


def generate_scenes(n, seed, n_views=3, camera_mode="fixed", start=0, workers=1,
                    **kw) -> List[SceneBundle]:
    specs = [SceneSpec(n_views=n_views, camera_mode=camera_mode, seed=seed, scene_id=i, **kw)
             for i in range(start, start + n)]
    return parallel_map(_gen, specs, workers)


def parallel_map(fn, items, workers=1):
    """Ordered map; results never depend on the worker count."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def prepare(bundles: Sequence[SceneBundle], seed=0, views: Optional[Sequence[int]] = None,
            backbone_seed=BACKBONE_SEED) -> List[PreparedScene]:
    """Point sampling, features and frozen-branch output for each scene.

    ``views`` selects a subset of camera indices (view 1 first) before
    feature extraction.
    """
    backbone = PoseNet(seed=0, backbone_seed=backbone_seed)
    out = []
    for b in bundles:
        if views is not None:
            b = b.subset_views(views)
        feats = scene_features(b.views, rng_for(seed, "points", b.scene_id))
        out.append(PreparedScene(b, feats, backbone.pooled_pixels(feats)))
    return out


def training_samples(prepared: Sequence[PreparedScene], assets: ClassAssets,
                     symmetry_aware=True) -> List[TrainingSample]:
    return [make_sample(p.bundle, None, assets, symmetry_aware=symmetry_aware, feats=p.feats,
                        pooled=p.pooled) for p in prepared]


def evaluate(predictor, prepared: Sequence[PreparedScene], assets: ClassAssets,
             bandwidth=None) -> List[ObjectResult]:
    """Score a predictor (a PoseNet or 'oracle') on prepared scenes."""
    kw = {} if bandwidth is None else {"bandwidth": bandwidth}
    rows = []
    for p in prepared:
        if predictor == "oracle":
            out = oracle_predictor(p.bundle, assets)(p.feats)
        else:
            out = predictor.predict(p.feats, p.pooled)
        est = estimate_from_predictions(p.feats.coordinates, out, assets, **kw)
        rows += score_scene(p.bundle, est, assets)
    return rows


def precision(rows: Sequence[ObjectResult], metric="adds", classes=None, threshold=0.02) -> float:
    sel = [r for r in rows if classes is None or r.class_id in classes]
    if not sel:
        return float("nan")
    return 100.0 * float(np.mean([getattr(r, metric) < threshold for r in sel]))


def symmetric_classes(assets: ClassAssets):
    return sorted(c for c, s in assets.symmetries.items() if s.is_symmetric)


def asymmetric_classes(assets: ClassAssets):
    return sorted(c for c, s in assets.symmetries.items() if not s.is_symmetric)


@dataclass
class AblationPair:
    seed: int
    sym_on: float          # quotient ADD(-S) precision on symmetric classes, percent
    sym_off: float
    asym_on: float         # ADD-S precision on asymmetric classes, percent
    asym_off: float
    rot_on: float          # median quotient rotation error on symmetric classes, degrees
    rot_off: float

    @property
    def on_wins(self) -> bool:
        return self.sym_on > self.sym_off


def ablate(train_set: Sequence[PreparedScene], test_set: Sequence[PreparedScene],
           assets: ClassAssets, seeds: Sequence[int], cfg: TrainConfig = TrainConfig(),
           progress=None, keep_models=False):
    """Paired symmetry-on / symmetry-off trainings, one pair per seed."""
    samples = {flag: training_samples(train_set, assets, flag) for flag in (True, False)}
    sym_c, asym_c = symmetric_classes(assets), asymmetric_classes(assets)
    pairs, models = [], {}
    for seed in seeds:
        res = {}
        for flag in (True, False):
            c = replace(cfg, seed=seed, symmetry_aware=flag)
            net = train(samples[flag], c)
            rows = evaluate(net, test_set, assets)
            sym_rows = [r for r in rows if r.class_id in sym_c]
            res[flag] = (precision(rows, "qadd", sym_c), precision(rows, "adds", asym_c),
                         float(np.degrees(np.median([r.rot_err for r in sym_rows])))
                         if sym_rows else float("nan"))
            if keep_models:
                models[(seed, flag)] = net
            if progress:
                progress(seed, flag, res[flag])
        pairs.append(AblationPair(seed, res[True][0], res[False][0], res[True][1],
                                  res[False][1], res[True][2], res[False][2]))
    return (pairs, models) if keep_models else pairs


def occlusion_scenes(n, seed, min_occlusion=0.7) -> List[SceneBundle]:
    """Three-view scenes whose target (object 0) is heavily hidden in view 1.

    Targets are the low objects; the two tall ones act as occluders.
    """
    out = []
    for i in range(n):
        rng = rng_for(seed, "experiments.occlusion", i)
        target = int(rng.choice([1, 4, 5, 6]))
        classes = [target] + [int(c) for c in rng.permutation([2, 3])]
        spec = SceneSpec(classes=classes, seed=seed, scene_id=i)
        out.append(generate_occlusion_scene(spec, classes[0], classes[1:], min_occlusion))
    return out


def detection_rate(rows: Sequence[ObjectResult], target_class_by_scene: Dict[int, int],
                   threshold=0.02) -> float:
    """Percent of target objects found with ADD-S below the threshold."""
    hits = [r.detected and r.adds < threshold for r in rows
            if target_class_by_scene.get(r.scene_id) == r.class_id]
    return 100.0 * float(np.mean(hits))
