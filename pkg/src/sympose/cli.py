"""Command-line entry point: ``sympose <subcommand> [options]``.

Every artifact carries a small metadata header (package version, seed and
the effective configuration) so reruns can be compared byte for byte. The
thread count only affects wall time and is left out of that header.
"""
from __future__ import annotations

import os

# BLAS threading can reorder floating-point reductions; parallelism here
# comes from the process pool instead.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import csv
import io as _io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class UsageError(Exception):
    pass


def _meta(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("threads", "func", "config") and not callable(v)}
    return {"tool": "sympose", "version": __version__, "seed": args.seed,
            "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}}


def _threads(args) -> int:
    env = os.environ.get("SYMPOSE_THREADS")
    n = int(env) if env else int(args.threads)
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _scene_dirs(root) -> list:
    root = Path(root)
    if (root / "scene.json").exists():
        return [root]
    dirs = sorted(p for p in root.glob("scene_*") if (p / "scene.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no scenes found under {root}")
    return dirs


def _load_assets(symdir, keypoint_mode="curvature"):
    """Library keypoints plus symmetry sets from ``symdir`` (discovered when absent)."""
    from .keypoints import select_keypoints
    from .mesh import LIBRARY, library_mesh
    from .pipeline import ClassAssets, build_assets
    from .symmetry import SymmetrySet

    if symdir is None:
        return build_assets(keypoint_mode=keypoint_mode)
    symdir = Path(symdir)
    syms = {}
    if symdir.is_file():
        d = sio.load_json(symdir)
        if "symmetries" in d:
            return ClassAssets.from_json(d)
        raise UsageError(f"{symdir} is a single symmetry set; pass the directory written by "
                         "'discover-sym --library'")
    for c, (name, _, _) in sorted(LIBRARY.items()):
        f = symdir / f"{name}.json"
        if not f.exists():
            raise FileNotFoundError(f"missing symmetry file {f}")
        syms[c] = SymmetrySet.from_json(sio.load_json(f))
    kps = {c: select_keypoints(library_mesh(c), c, keypoint_mode) for c in syms}
    return ClassAssets(kps, syms)


def _mesh_arg(spec):
    from .io import read_mesh
    from .mesh import LIBRARY, class_by_name, library_mesh

    if spec.startswith("library:"):
        name = spec.split(":", 1)[1]
        if name not in {n for n, _, _ in LIBRARY.values()}:
            raise UsageError(f"unknown library object {name!r}")
        return library_mesh(class_by_name(name)), class_by_name(name)
    return read_mesh(spec), 0


# -- subcommands ------------------------------------------------------------------------------

def cmd_gen_scenes(args):
    from .experiments import occlusion_scenes, parallel_map
    from .scenegen import SceneSpec, generate_scene, save_scene

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.occlusion:
        bundles = occlusion_scenes(args.count, args.seed)
    else:
        specs = [SceneSpec(n_views=args.views, camera_mode=args.mode, seed=args.seed,
                           scene_id=args.start + i, sigma_rot=np.deg2rad(args.sigma_rot_deg),
                           sigma_trans=args.sigma_trans)
                 for i in range(args.count)]
        bundles = parallel_map(generate_scene, specs, _threads(args))
    for b in bundles:
        save_scene(b, out)
    sio.dump_json(out / "scenes.json", {"meta": _meta(args),
                                        "scenes": [f"scene_{b.scene_id:05d}" for b in bundles]})
    print(f"wrote {len(bundles)} scenes to {out}")


def cmd_discover_sym(args):
    from .mesh import LIBRARY, library_mesh
    from .symmetry import DiscoveryConfig, discover_symmetries

    cfg = DiscoveryConfig(tau_frac=args.tau_frac)
    if args.library:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for c, (name, _, _) in sorted(LIBRARY.items()):
            sym = discover_symmetries(library_mesh(c), cfg)
            sio.dump_json(out / f"{name}.json", {**sym.to_json(), "meta": _meta(args)})
            print(f"{name}: {len(sym)} transforms")
        return
    if not args.mesh:
        raise UsageError("discover-sym needs --mesh or --library")
    mesh, _ = _mesh_arg(args.mesh)
    sym = discover_symmetries(mesh, cfg)
    sio.dump_json(args.out, {**sym.to_json(), "meta": _meta(args)})
    print(f"{sym.name}: {len(sym)} transforms ({', '.join(sorted(set(sym.kinds)))})")


def cmd_select_keypoints(args):
    from .keypoints import select_keypoints

    mesh, cid = _mesh_arg(args.mesh)
    km = select_keypoints(mesh, args.class_id if args.class_id is not None else cid, args.mode,
                          args.count)
    sio.dump_json(args.out, {**km.to_json(), "meta": _meta(args)})
    print(f"wrote {len(km.keypoints)} keypoints to {args.out}")


def _load_bundles(root, views):
    from .scenegen import load_scene

    bundles = [load_scene(d) for d in _scene_dirs(root)]
    for b in bundles:
        if views > b.n_views:
            raise UsageError(f"scene {b.scene_id} has only {b.n_views} views")
    return bundles


def _train_config(args, symmetry_aware):
    from .model import TrainConfig

    return TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum,
                       width=args.width, symmetry_aware=symmetry_aware, seed=args.seed,
                       weights=tuple(args.loss_weights), k_p=args.k, k_i=args.k)


def cmd_train_demo(args):
    from .experiments import prepare, training_samples
    from .model import PoseNet, train

    bundles = _load_bundles(args.scenes, args.views)
    assets = _load_assets(args.sym)
    prepared = prepare(bundles, seed=args.seed, views=range(args.views))
    cfg = _train_config(args, args.symmetry == "on")
    net = PoseNet(cfg.width, cfg.fuse_width, seed=cfg.seed, k_p=cfg.k_p, k_i=cfg.k_i)
    log = args.log or str(Path(args.out).with_suffix(".log.csv"))
    net = train(training_samples(prepared, assets, cfg.symmetry_aware), cfg, net, log_path=log)
    net.save(args.out, extra={"meta": _meta(args), "scenes": len(bundles)})
    last = net.training_log[-1]
    print(f"trained on {len(bundles)} scenes, final L_total {last[4]:.4f}; model {args.out}")


def cmd_estimate(args):
    from .experiments import prepare
    from .model import PoseNet
    from .pipeline import estimate_from_predictions, estimates_to_json, oracle_predictor

    if args.model is None and not args.oracle:
        raise UsageError("estimate needs --model or --oracle")
    bundles = _load_bundles(args.scene, args.views)
    assets = _load_assets(args.sym)
    net = None if args.oracle else PoseNet.load(args.model)
    single = len(bundles) == 1 and not Path(args.out).is_dir() and str(args.out).endswith(".json")
    out = Path(args.out)
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    kwargs = {"bandwidth": args.bandwidth}
    for p in prepare(bundles, seed=args.seed, views=range(args.views)):
        pred = oracle_predictor(p.bundle, assets)(p.feats) if net is None else \
            net.predict(p.feats, p.pooled)
        est = estimate_from_predictions(p.feats.coordinates, pred, assets, **kwargs)
        doc = {**estimates_to_json(p.bundle.scene_id, est), "meta": _meta(args)}
        target = out if single else out / f"scene_{p.bundle.scene_id:05d}.json"
        sio.dump_json(target, doc)
    print(f"estimated {len(bundles)} scene(s) -> {out}")


def _report_csv(report, meta) -> str:
    import json

    buf = _io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "metric", "value"])
    for c, k, v in report.rows():
        w.writerow([c, k, f"{v:.6f}" if isinstance(v, float) else v])
    for r in report.json_errors():
        w.writerow([r["class_id"], f"adds@{r['scene']:05d}", _fmt(r["adds"])])
        w.writerow([r["class_id"], f"add_s@{r['scene']:05d}", _fmt(r["add_s"])])
    return buf.getvalue()


def _fmt(v):
    return "inf" if not np.isfinite(v) else f"{v:.9f}"


def cmd_evaluate(args):
    from .geometry import Pose
    from .metrics import MetricReport, add_dash_s, adds_error, plot_curves
    from .scenegen import load_scene

    assets = _load_assets(args.sym)
    report = MetricReport(max_threshold=args.max_threshold)
    pred_root = Path(args.pred)
    for d in _scene_dirs(args.gt):
        b = load_scene(d)
        f = pred_root / f"scene_{b.scene_id:05d}.json" if pred_root.is_dir() else pred_root
        if not f.exists():
            raise FileNotFoundError(f"no prediction for scene {b.scene_id} ({f})")
        pred = sio.load_json(f)
        if int(pred["scene"]) != b.scene_id:
            raise ValueError(f"{f} holds scene {pred['scene']}, expected {b.scene_id}")
        est = {int(e["class_id"]): Pose.from_json(e) for e in pred["estimates"]}
        for c, g in zip(b.object_classes, b.gt_poses()):
            if c not in est:
                report.record(b.scene_id, c, np.inf, np.inf)
                continue
            pts = assets.model_points(c)
            report.record(b.scene_id, c, adds_error(est[c], g, pts),
                          add_dash_s(est[c], g, pts, assets.is_symmetric(c)))
    meta = _meta(args)
    Path(args.out).write_text(_report_csv(report, meta))
    sio.dump_json(Path(args.out).with_suffix(".json"), {**report.to_json(), "meta": meta})
    if args.plot:
        plot_curves(_curves(report), args.plot, args.max_threshold)
    summary = {k: v for c, k, v in report.rows() if c == "all"}
    print(f"ADD-S AUC {summary['adds_auc']:.2f}  ADD(-S) AUC {summary['add_s_auc']:.2f}  "
          f"ADD-S<2cm {summary['precision_2cm']:.2f}%")


def _curves(report):
    from .mesh import class_name

    curves = {class_name(c): report.adds[c] for c in report.adds}
    curves["all"] = [e for c in sorted(report.adds) for e in report.adds[c]]
    return curves


def read_error_rows(path):
    """Per-object ADD-S errors stored in an evaluate CSV, grouped by class."""
    errors = {}
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            if row["metric"].startswith("adds@"):
                errors.setdefault(int(row["class"]), []).append(float(row["value"]))
    return errors


def cmd_report(args):
    from .mesh import class_name
    from .metrics import auc, plot_curves, precision_at

    errors = read_error_rows(args.input)
    if not errors:
        raise ValueError(f"{args.input} holds no per-object errors")
    curves = {class_name(c): v for c, v in errors.items()}
    curves["all"] = [e for c in sorted(errors) for e in errors[c]]
    if args.plot:
        plot_curves(curves, args.plot, args.max_threshold)
    for name in sorted(curves):
        e = np.minimum(curves[name], 1e9)
        print(f"{name:14s} ADD-S AUC {auc(e, args.max_threshold):6.2f}  "
              f"<2cm {precision_at(curves[name]):6.2f}%")


def cmd_ablate(args):
    from .experiments import ablate, generate_scenes, prepare

    assets = _load_assets(args.sym_dir)
    if args.train:
        train_b = _load_bundles(args.train, args.views)
    else:
        train_b = generate_scenes(args.n_train, args.seed + 1000, workers=_threads(args))
    if args.test:
        test_b = _load_bundles(args.test, args.views)
    else:
        test_b = generate_scenes(args.n_test, args.seed + 2000, workers=_threads(args))
    train_p = prepare(train_b, seed=args.seed, views=range(args.views))
    test_p = prepare(test_b, seed=args.seed + 1, views=range(args.views))
    cfg = _train_config(args, True)
    pairs = ablate(train_p, test_p, assets, args.seeds, cfg)
    buf = _io.StringIO()
    import json
    buf.write("# " + json.dumps(_meta(args), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "symmetry", "sym_quotient_add_precision", "asym_adds_precision",
                "sym_median_quotient_rot_deg"])
    for p in pairs:
        if args.symmetry in ("on", "both"):
            w.writerow([p.seed, "on", f"{p.sym_on:.4f}", f"{p.asym_on:.4f}", f"{p.rot_on:.4f}"])
        if args.symmetry in ("off", "both"):
            w.writerow([p.seed, "off", f"{p.sym_off:.4f}", f"{p.asym_off:.4f}",
                        f"{p.rot_off:.4f}"])
    Path(args.out).write_text(buf.getvalue())
    wins = sum(p.on_wins for p in pairs)
    print(f"symmetry-aware loss wins {wins}/{len(pairs)} seed pairs; table in {args.out}")


# -- parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sympose", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sympose {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes (SYMPOSE_THREADS overrides)")
    common.add_argument("--config", help="TOML file with option defaults; flags win")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    g = sub.add_parser("gen-scenes", parents=[common], help="render synthetic scenes")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--views", type=int, default=3)
    g.add_argument("--mode", choices=["fixed", "quadrant", "wiggle"], default="fixed")
    g.add_argument("--start", type=int, default=0, help="first scene id")
    g.add_argument("--sigma-rot-deg", type=float, default=1.0)
    g.add_argument("--sigma-trans", type=float, default=0.005)
    g.add_argument("--occlusion", action="store_true",
                   help="scenes with one target mostly hidden in view 1")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scenes)

    d = sub.add_parser("discover-sym", parents=[common], help="find rotational symmetries")
    d.add_argument("--mesh", help="PLY/OBJ path or library:<name>")
    d.add_argument("--library", action="store_true", help="all library objects into --out dir")
    d.add_argument("--tau-frac", type=float, default=0.01)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_discover_sym)

    k = sub.add_parser("select-keypoints", parents=[common], help="salience-weighted FPS")
    k.add_argument("--mesh", required=True, help="PLY/OBJ path or library:<name>")
    k.add_argument("--mode", choices=["curvature", "uniform"], default="curvature")
    k.add_argument("--count", type=int, default=8)
    k.add_argument("--class-id", type=int)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_select_keypoints)

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--epochs", type=int, default=30)
    train_opts.add_argument("--lr", type=float, default=1e-2)
    train_opts.add_argument("--momentum", type=float, default=0.9)
    train_opts.add_argument("--width", type=int, default=64)
    train_opts.add_argument("--k", type=int, default=3, help="K_p = K_i neighbours")
    train_opts.add_argument("--loss-weights", type=float, nargs=3, default=[2.0, 1.0, 1.0],
                            metavar=("L1", "L2", "L3"))

    t = sub.add_parser("train-demo", parents=[common, train_opts], help="train the heads")
    t.add_argument("--scenes", required=True)
    t.add_argument("--views", type=int, default=3)
    t.add_argument("--sym", help="directory from 'discover-sym --library'")
    t.add_argument("--symmetry", choices=["on", "off"], default="on",
                   help="symmetry-aware keypoint loss")
    t.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_demo)

    e = sub.add_parser("estimate", parents=[common], help="estimate object poses")
    e.add_argument("--scene", required=True, help="scene directory or directory of scenes")
    e.add_argument("--model")
    e.add_argument("--oracle", action="store_true", help="use ground-truth offsets")
    e.add_argument("--views", type=int, default=3)
    e.add_argument("--sym")
    e.add_argument("--bandwidth", type=float, default=0.02)
    e.add_argument("--out", required=True, help="poses.json, or a directory for many scenes")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", parents=[common], help="ADD-S / ADD(-S) report")
    v.add_argument("--gt", required=True)
    v.add_argument("--pred", required=True)
    v.add_argument("--sym")
    v.add_argument("--max-threshold", type=float, default=0.10)
    v.add_argument("--plot", help="optional SVG accuracy-threshold curves")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", parents=[common, train_opts],
                       help="paired symmetry-aware vs plain training")
    a.add_argument("--symmetry", "--sym", dest="symmetry", choices=["on", "off", "both"],
                   default="both", help="which arm(s) to report")
    a.add_argument("--sym-dir")
    a.add_argument("--train", help="training scenes (generated when absent)")
    a.add_argument("--test", help="test scenes (generated when absent)")
    a.add_argument("--n-train", type=int, default=500)
    a.add_argument("--n-test", type=int, default=100)
    a.add_argument("--views", type=int, default=3)
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", parents=[common], help="plot curves from an evaluate CSV")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--plot")
    r.add_argument("--max-threshold", type=float, default=0.10)
    r.set_defaults(func=cmd_report)
    return p


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse argv, taking defaults from the TOML file named by --config.

    Top-level keys apply to every subcommand, a ``[subcommand]`` table to
    that subcommand only; explicit flags always win.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    if path is None:
        return parser.parse_args(argv)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        conf = tomllib.load(fh)
    subs = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subs), None)
    if command is None:
        return parser.parse_args(argv)
    values = {k: v for k, v in conf.items() if not isinstance(v, dict)}
    values.update(conf.get(command, {}))
    values = {k.replace("-", "_"): v for k, v in values.items()}
    sub = subs[command]
    dests = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - dests)
    if unknown:
        sub.error(f"unknown config keys: {', '.join(unknown)}")
    sub.set_defaults(**values)
    for action in sub._actions:
        if action.dest in values:
            action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        args.func(args)
    except UsageError as e:
        print(f"sympose: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:   # noqa: BLE001 - report any failure as a runtime error
        print(f"sympose: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
