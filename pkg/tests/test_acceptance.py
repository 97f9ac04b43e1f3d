"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the conftest hook prints at the end
of the run. The trained-pipeline data (500 training scenes, 100 test
scenes, prepared features, five seed pairs) is built once per module and
reused by the multi-view and wiggle checks.
"""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial import cKDTree

from sympose.experiments import (ablate, detection_rate, evaluate, generate_scenes,
                                 occlusion_scenes, precision, prepare)
from sympose.fusion import (PixelFeatureMap, PointFeatureMap, pixel_to_point_fuse,
                            point_to_pixel_fuse)
from sympose.geometry import Pose, axis_angle, random_rotation, rotation_angle, rotation_distance
from sympose.keypoints import select_keypoints
from sympose.losses import instance_targets, symmetry_keypoint_loss
from sympose.mesh import LIBRARY, library_mesh
from sympose.metrics import add_error, adds_error, auc
from sympose.model import TrainConfig
from sympose.nn import MLP
from sympose.pipeline import build_assets, estimate_scene, oracle_predictor, score_scene
from sympose.rng import rng_for
from sympose.scenegen import SceneSpec, generate_scene, render_depth
from sympose.symmetry import discover_symmetries
from sympose.voting import least_squares_fit

from conftest import random_pose, record

TRAIN_SEED, TEST_SEED = 1000, 2000
N_TRAIN, N_TEST, N_OCCLUDED = 500, 100, 100
ABLATION_SEEDS = [0, 1, 2, 3, 4]
EPOCHS = 30


@pytest.fixture(scope="module")
def assets():
    return build_assets()


@pytest.fixture(scope="module")
def trained(assets):
    """Criterion-7 data and networks, shared with criteria 8 and 9."""
    t0 = time.perf_counter()
    train_p = prepare(generate_scenes(N_TRAIN, TRAIN_SEED), seed=0)
    test_p = prepare(generate_scenes(N_TEST, TEST_SEED), seed=1)
    pairs, models = ablate(train_p, test_p, assets, ABLATION_SEEDS,
                           TrainConfig(epochs=EPOCHS), keep_models=True)
    return {"pairs": pairs, "models": models, "test": test_p,
            "seconds": time.perf_counter() - t0}


# -- 1 ---------------------------------------------------------------------------------------

def test_criterion_01_least_squares_fit():
    rng = np.random.default_rng(101)
    models = [select_keypoints(library_mesh(c), c).keypoints for c in LIBRARY]
    t0 = time.perf_counter()
    worst_r = worst_t = 0.0
    noisy_r, noisy_t = [], []
    for _ in range(1000):
        model = models[int(rng.integers(len(models)))]
        pose = random_pose(rng, max_t=1.0)
        est = least_squares_fit(pose.apply(model), model)
        worst_r = max(worst_r, rotation_distance(est.rotation, pose.rotation))
        worst_t = max(worst_t, float(np.linalg.norm(est.translation - pose.translation)))
        noisy = pose.apply(model) + rng.normal(0, 0.001, model.shape)
        est = least_squares_fit(noisy, model)
        noisy_r.append(np.degrees(rotation_distance(est.rotation, pose.rotation)))
        noisy_t.append(float(np.linalg.norm(est.translation - pose.translation)))
    dt = time.perf_counter() - t0
    med_r, med_t = float(np.median(noisy_r)), float(np.median(noisy_t))
    ok = worst_r < 1e-9 and worst_t < 1e-9 and med_r < 1.0 and med_t < 0.005 and dt < 5
    record(1, ok, f"exact: max rot {worst_r:.1e} rad, max trans {worst_t:.1e} m; "
                  f"1 mm noise: median rot {med_r:.3f} deg, trans {med_t * 1e3:.2f} mm; {dt:.2f} s")


# -- 2 ---------------------------------------------------------------------------------------

def grid_oracle(mesh, max_order=8, tau_frac=0.01):
    """Brute-force symmetry search over a fixed axis/angle grid.

    Axes are all integer directions with components in -2..2; angles are
    2 pi k / n for n up to ``max_order``. A rotation about the surface
    centroid counts when the mean closest-point distance from the surface
    samples to the rotated dense reference samples is below tau.
    """
    c = mesh.centroid
    q = mesh.surface_samples - c
    tree = cKDTree(mesh.reference_samples - c)
    tau = tau_frac * mesh.diameter
    axes = []
    for v in np.stack(np.meshgrid(*[np.arange(-2, 3)] * 3), -1).reshape(-1, 3):
        if not v.any():
            continue
        u = v / np.linalg.norm(v)
        if not any(abs(abs(u @ a) - 1) < 1e-12 for a in axes):
            axes.append(u)
    angles = sorted({2 * np.pi * k / n for n in range(2, max_order + 1) for k in range(1, n)})
    found = [np.eye(3)]
    for a in axes:
        for ang in angles:
            R = axis_angle(a, ang)
            if any(rotation_distance(R, F) < 1e-6 for F in found):
                continue
            if tree.query(q @ R)[0].mean() < tau:      # distance to R(ref) == R^T q to ref
                found.append(R)
    return found


def set_deviation(a, b):
    """Largest distance from a rotation in ``a`` to its nearest one in ``b`` (inf if sizes differ)."""
    if len(a) != len(b):
        return np.inf
    return max(min(rotation_distance(x, y) for y in b) for x in a)


# discovered rotations come from sampled residuals, so they match the exact
# grid rotations to sampling resolution rather than to roundoff
SET_TOL = 1e-2


def test_criterion_02_symmetry_fixtures():
    fresh = {c: LIBRARY[c][1]() for c in (1, 2, 3, 5)}      # new meshes: no warm caches
    t0 = time.perf_counter()
    found = {c: discover_symmetries(m) for c, m in fresh.items()}
    dt = time.perf_counter() - t0
    cub, prism, cyl, tet = found[1], found[2], found[3], found[5]
    oracle = {c: grid_oracle(fresh[c]) for c in fresh}
    details, ok = [], dt < 60

    dev_cub = set_deviation(cub.transforms, oracle[1])
    ok_cub = len(cub) == 4 and dev_cub < SET_TOL
    details.append(f"cuboid {len(cub)} (oracle {len(oracle[1])}, max dev {dev_cub:.1e} rad)")

    four_fold = any(abs(rotation_angle(T) - np.pi / 2) < 1e-6 for T in prism.transforms)
    dev_prism = set_deviation(prism.transforms, oracle[2])
    ok_prism = (len(prism) == 8 and four_fold and dev_prism < SET_TOL
                and all(np.linalg.det(T) > 0 for T in prism.transforms))
    details.append(f"prism {len(prism)} 4-fold={four_fold} (oracle {len(oracle[2])}, "
                   f"max dev {dev_prism:.1e} rad)")

    # cylinder: every grid rotation the oracle accepts is about one axis, the
    # discovered set is 16 rotations about that axis, each accepted by the oracle
    axis = np.asarray(cyl.continuous_axis, dtype=np.float64)
    tilt = max(np.linalg.norm(np.cross(_axis_of(R), axis)) for R in oracle[3][1:])
    about_axis = tilt < SET_TOL
    dense = all(_passes(fresh[3], axis_angle(axis, a)) for a in np.linspace(0.1, 6.2, 40))
    steps = sorted(round(np.degrees(_signed_angle(T, axis)) % 360, 6) for T in cyl.transforms)
    ok_cyl = (cyl.is_continuous and len(cyl) == 16 and about_axis and dense
              and np.allclose(steps, np.arange(16) * 22.5, atol=1e-6)
              and all(_passes(fresh[3], T) for T in cyl.transforms))
    details.append(f"cylinder continuous={cyl.is_continuous} {len(cyl)} transforms, "
                   f"axis off grid axis by {tilt:.1e} rad")

    ok_tet = len(tet) == 1 and np.allclose(tet.transforms[0], np.eye(3)) and len(oracle[5]) == 1
    details.append(f"tetrahedron {len(tet)} (oracle {len(oracle[5])})")
    ok = ok and ok_cub and ok_prism and ok_cyl and ok_tet
    record(2, ok, "; ".join(details) + f"; discovery {dt:.1f} s")


def _axis_of(R):
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.linalg.norm(w) < 1e-9:          # half turn: axis is the +1 eigenvector
        vals, vecs = np.linalg.eigh((R + R.T) / 2)
        return vecs[:, np.argmax(vals)]
    return w / np.linalg.norm(w)


def _signed_angle(R, axis):
    x = np.cross(axis, [1.0, 0.0, 0.0])
    if np.linalg.norm(x) < 1e-6:
        x = np.cross(axis, [0.0, 1.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(axis, x)
    r = R @ x
    return np.arctan2(r @ y, r @ x)


def _passes(mesh, R, tau_frac=0.01):
    c = mesh.centroid
    tree = cKDTree(mesh.reference_samples - c)
    return tree.query((mesh.surface_samples - c) @ R)[0].mean() < tau_frac * mesh.diameter


# -- 3 ---------------------------------------------------------------------------------------

def _loss_case(seed, sym):
    rng = np.random.default_rng(seed)
    km = rng.normal(0, 0.05, (8, 3))
    pose = random_pose(rng)
    pts = pose.translation + rng.normal(0, 0.05, (30, 3))
    t = instance_targets(pts, np.arange(30), km, np.zeros(3), pose, sym)
    pred = rng.normal(0, 0.1, (30, 8, 3))
    return pred, t.variant_offsets


def test_criterion_03_symmetry_aware_loss(assets):
    prism = assets.symmetries[2].stacked()
    ident = np.eye(3)[None]
    # (a) a single identity symmetry reproduces the plain loss
    err_a = 0.0
    for s in range(100):
        pred, var = _loss_case(s, ident)
        plain = np.linalg.norm(pred - var[0], axis=-1).sum() / len(pred)
        err_a = max(err_a, abs(symmetry_keypoint_loss(pred, var)[0] - plain))
    # (b) never above the identity-only loss
    worst_b = -np.inf
    for s in range(100):
        pred, var = _loss_case(1000 + s, prism)
        worst_b = max(worst_b, symmetry_keypoint_loss(pred, var)[0]
                      - symmetry_keypoint_loss(pred, var[:1])[0])
    # (c) zero at every symmetry variant
    err_c = 0.0
    for s in range(20):
        _, var = _loss_case(2000 + s, prism)
        for k in range(len(var)):
            err_c = max(err_c, symmetry_keypoint_loss(var[k], var)[0])
    # (d) gradients against central differences, away from ties
    worst_d, used = 0.0, 0
    seed = 3000
    while used < 20:
        pred, var = _loss_case(seed, prism)
        seed += 1
        per = np.sort([np.linalg.norm(pred - v, axis=-1).sum() / len(pred) for v in var])
        if per[1] - per[0] < 1e-3:
            continue
        used += 1
        _, _, g = symmetry_keypoint_loss(pred, var)
        num = np.zeros_like(pred)
        for i in np.ndindex(pred.shape):
            old = pred[i]
            pred[i] = old + 1e-6
            up = symmetry_keypoint_loss(pred, var)[0]
            pred[i] = old - 1e-6
            down = symmetry_keypoint_loss(pred, var)[0]
            pred[i] = old
            num[i] = (up - down) / 2e-6
        worst_d = max(worst_d, np.linalg.norm(g - num) / np.linalg.norm(num))
    ok = err_a <= 1e-12 and worst_b <= 0 and err_c <= 1e-12 and worst_d < 1e-4
    record(3, ok, f"(a) {err_a:.1e}; (b) max on-off {worst_b:.2e}; (c) {err_c:.1e}; "
                  f"(d) max rel grad err {worst_d:.1e} over 20 seeds")


# -- 4 ---------------------------------------------------------------------------------------

def _toy(rng):
    n_views, H, W = int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
    c_pix, c_pt, n_pts = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(4, 20))
    xyz = rng.normal(size=(n_views, H, W, 3))
    xyz[rng.random((n_views, H, W)) < 0.2] = np.nan
    xyz[0, 0, 0] = 0.0                            # at least one valid pixel
    pix = PixelFeatureMap(rng.normal(size=(n_views, H, W, c_pix)), xyz)
    pts = PointFeatureMap(rng.normal(size=(n_pts, c_pt)), rng.normal(size=(n_pts, 3)))
    k = int(rng.integers(1, 4))
    width = 6
    mlps = (MLP([c_pt, width], "relu", rng), MLP([width + c_pix, width], "relu", rng),
            MLP([c_pix, width], "relu", rng), MLP([width + c_pt, width], "relu", rng))
    return pix, pts, k, mlps


def _nearest(q, targets, k):
    d = [(float(np.sum((t - q) ** 2)), j) for j, t in enumerate(targets)
         if not np.isnan(t).any()]
    return [j for _, j in sorted(d)[:k]]


def _ref_point_to_pixel(pix, pts, k, mlp_p, mlp_fp):
    N, H, W, _ = pix.features.shape
    out = np.zeros((N, H, W, mlp_fp.out_dim))
    for v in range(N):
        for i in range(H):
            for j in range(W):
                q = pix.xyz[v, i, j]
                pooled = np.zeros(mlp_p.out_dim)
                if not np.isnan(q).any():
                    nb = _nearest(q, pts.coordinates, k)
                    pooled = np.max([mlp_p(pts.features[n][None])[0] for n in nb], axis=0)
                out[v, i, j] = mlp_fp(np.concatenate([pooled, pix.features[v, i, j]])[None])[0]
    return out


def _ref_pixel_to_point(pix, pts, k, mlp_i, mlp_fi):
    flat_xyz = pix.xyz.reshape(-1, 3)
    flat_f = pix.features.reshape(-1, pix.features.shape[-1])
    valid = ~np.isnan(flat_xyz).any(1)
    vx, vf = flat_xyz[valid], flat_f[valid]
    out = []
    for p, f in zip(pts.coordinates, pts.features):
        nb = _nearest(p, vx, k)
        img = mlp_i(np.max(vf[nb], axis=0)[None])[0]
        out.append(mlp_fi(np.concatenate([img, f])[None])[0])
    return np.array(out)


def test_criterion_04_fusion_operators():
    worst = 0.0
    cross_ok = perm_ok = True
    for s in range(50):
        rng = np.random.default_rng(4000 + s)
        pix, pts, k, (mlp_p, mlp_fp, mlp_i, mlp_fi) = _toy(rng)
        a = point_to_pixel_fuse(pix, pts, mlp_p, mlp_fp, k)
        b = pixel_to_point_fuse(pix, pts, mlp_i, mlp_fi, k)
        worst = max(worst,
                    np.abs(a.features - _ref_point_to_pixel(pix, pts, k, mlp_p, mlp_fp)).max(),
                    np.abs(b.features - _ref_pixel_to_point(pix, pts, k, mlp_i, mlp_fi)).max())
        # cross-view independence: changing other views leaves view 0 untouched
        if pix.n_views > 1:
            f2, x2 = pix.features.copy(), pix.xyz.copy()
            f2[1:] = rng.normal(size=f2[1:].shape)
            x2[1:] = rng.normal(size=x2[1:].shape)
            a2 = point_to_pixel_fuse(PixelFeatureMap(f2, x2), pts, mlp_p, mlp_fp, k)
            cross_ok &= np.array_equal(a2.features[0], a.features[0])
        # point permutation: pixel outputs unchanged, point outputs permuted
        perm = rng.permutation(len(pts.coordinates))
        pts_p = PointFeatureMap(pts.features[perm], pts.coordinates[perm])
        perm_ok &= np.array_equal(point_to_pixel_fuse(pix, pts_p, mlp_p, mlp_fp, k).features,
                                  a.features)
        perm_ok &= np.array_equal(pixel_to_point_fuse(pix, pts_p, mlp_i, mlp_fi, k).features,
                                  b.features[perm])
    ok = worst < 1e-6 and cross_ok and perm_ok
    record(4, ok, f"max |batched - loop| {worst:.1e} over 50 configs; cross-view "
                  f"independence {cross_ok}; permutation equivariance {perm_ok}")


# -- 5 ---------------------------------------------------------------------------------------

def test_criterion_05_metrics():
    rng = np.random.default_rng(505)
    viol = 0
    for _ in range(1000):
        pts = library_mesh(int(rng.integers(1, 7))).surface_samples
        a, b = random_pose(rng), random_pose(rng)
        viol += adds_error(a, b, pts) > add_error(a, b, pts)
    zero, half = auc([0.0] * 10), auc([0.05], 0.10)
    worst = 0.0
    for _ in range(50):
        e = rng.uniform(0, 0.15, int(rng.integers(1, 40)))
        th = np.linspace(0.0, 0.10, 400_001)
        acc = (e[None, :] < th[:, None]).mean(1)
        worst = max(worst, abs(auc(e) - 100 * np.trapezoid(acc, th) / 0.10))
    ok = viol == 0 and zero == 100.0 and half == 50.0 and worst < 0.01
    record(5, ok, f"ADD-S > ADD in {viol}/1000; AUC(zeros) {zero}; AUC(half bound) {half}; "
                  f"max |AUC - integration| {worst:.4f}")


# -- 6 ---------------------------------------------------------------------------------------

def test_criterion_06_oracle_pipeline(assets):
    t0 = time.perf_counter()
    rows = []
    for i in range(200):
        b = generate_scene(SceneSpec(seed=600, scene_id=i))
        est = estimate_scene(b.views, assets, oracle_predictor(b, assets), seed=600, scene_id=i)
        rows += score_scene(b, est, assets)
    dt = time.perf_counter() - t0
    prec = precision(rows, "adds")
    worst = float(np.degrees(max(r.rot_err for r in rows)))
    ok = prec == 100.0 and worst < 0.1 and dt < 120
    record(6, ok, f"{len(rows)} objects, ADD-S<2cm {prec:.1f}%, max quotient rot err "
                  f"{worst:.1e} deg; {dt:.1f} s")


# -- 7 ---------------------------------------------------------------------------------------

def test_criterion_07_trained_pipeline(trained):
    pairs = trained["pairs"]
    wins = sum(p.on_wins for p in pairs)
    asym = min(p.asym_on for p in pairs)
    dt = trained["seconds"]
    table = ", ".join(f"s{p.seed}: {p.sym_on:.1f} vs {p.sym_off:.1f}" for p in pairs)
    ok = len(pairs) >= 5 and wins >= 4 and asym >= 90.0 and dt < 1800
    record(7, ok, f"asym ADD-S<2cm min {asym:.1f}%; sym quotient ADD<2cm on vs off [{table}]; "
                  f"wins {wins}/{len(pairs)}; {dt / 60:.1f} min")


# -- 8 ---------------------------------------------------------------------------------------

def test_criterion_08_multiview_occlusion(trained):
    net = trained["models"][(ABLATION_SEEDS[0], True)]
    assets = build_assets()
    bundles = occlusion_scenes(N_OCCLUDED, seed=800)
    occ = []
    for b in bundles:
        _, _, alone, _ = render_depth(b.object_classes[:1], b.object_poses[:1],
                                      b.true_camera_poses[0], b.views[0].intrinsics)
        occ.append(1 - (b.object_maps[0] == 1).sum() / (alone == 1).sum())
    targets = {b.scene_id: b.object_classes[0] for b in bundles}
    one = detection_rate(evaluate(net, prepare(bundles, seed=8, views=[0]), assets), targets)
    three = detection_rate(evaluate(net, prepare(bundles, seed=8), assets), targets)
    ok = min(occ) >= 0.7 and three > one
    record(8, ok, f"{len(bundles)} scenes, min view-1 occlusion {min(occ):.2f}; detection "
                  f"1 view {one:.0f}% vs 3 views {three:.0f}%")


# -- 9 ---------------------------------------------------------------------------------------

def test_criterion_09_wiggle(trained):
    net = trained["models"][(ABLATION_SEEDS[0], True)]
    assets = build_assets()
    fixed = precision(evaluate(net, trained["test"], assets), "adds")
    wig = prepare(generate_scenes(N_TEST, TEST_SEED, camera_mode="wiggle"), seed=1)
    wiggle = precision(evaluate(net, wig, assets), "adds")
    ok = fixed - wiggle < 10.0
    record(9, ok, f"3-view ADD-S<2cm fixed {fixed:.2f}% vs wiggle {wiggle:.2f}% "
                  f"(drop {fixed - wiggle:.2f} pts)")


# -- 10 --------------------------------------------------------------------------------------

PIPELINE = [
    ["gen-scenes", "--count", "6", "--out", "train"],
    ["gen-scenes", "--count", "3", "--start", "100", "--mode", "wiggle", "--out", "test"],
    ["gen-scenes", "--count", "1", "--occlusion", "--out", "occ"],
    ["discover-sym", "--library", "--out", "sym"],
    ["discover-sym", "--mesh", "library:l_clamp", "--out", "l_clamp_sym.json"],
    ["select-keypoints", "--mesh", "library:wedge", "--out", "wedge_kp.json"],
    ["train-demo", "--scenes", "train", "--sym", "sym", "--epochs", "2", "--out", "model.bin"],
    ["estimate", "--scene", "test", "--model", "model.bin", "--sym", "sym", "--out", "pred"],
    ["estimate", "--scene", "test", "--oracle", "--sym", "sym", "--out", "oracle"],
    ["evaluate", "--gt", "test", "--pred", "pred", "--sym", "sym", "--plot", "curves.svg",
     "--out", "report.csv"],
    ["report", "--in", "report.csv", "--plot", "redrawn.svg"],
    ["ablate", "--sym-dir", "sym", "--n-train", "6", "--n-test", "3", "--seeds", "0", "1",
     "--epochs", "2", "--out", "ablation.csv"],
]


def _run_all(workdir, threads):
    env = dict(os.environ, SYMPOSE_THREADS=str(threads), PYTHONHASHSEED="0")
    for cmd in PIPELINE:
        r = subprocess.run([sys.executable, "-m", "sympose.cli", *cmd, "--seed", "7"],
                           cwd=workdir, env=env, capture_output=True, text=True)
        if r.returncode != 0:
            raise RuntimeError(f"{cmd[0]} failed: {r.stderr}")
    return {str(p.relative_to(workdir)): p.read_bytes()
            for p in sorted(Path(workdir).rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path):
    runs = []
    for threads in (1, 3):
        d = tmp_path / f"t{threads}"
        d.mkdir()
        runs.append(_run_all(d, threads))
    a, b = runs
    differ = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    subcommands = sorted({c[0] for c in PIPELINE})
    ok = not differ and len(a) > 0
    record(10, ok, f"{len(subcommands)} subcommands, {len(a)} files byte-identical across "
                   f"1 and 3 threads" + (f"; differing: {differ[:5]}" if differ else ""))
