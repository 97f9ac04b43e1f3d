"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--out bench.csv]

Each kernel runs on the same inputs with both backends; outputs are checked
for equality before timings are reported.
"""
import argparse
import csv
import sys
import time

import numpy as np

from sympose import kernels
from sympose.geometry import Pose
from sympose.mesh import library_mesh
from sympose.scenegen import DEFAULT_INTRINSICS, look_at


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    q = rng.normal(size=(2048, 3))
    t = rng.normal(size=(8192, 3))
    yield "knn k=3 (2048 x 8192)", lambda b: kernels.knn(q, t, 3, backend=b)
    yield "closest_distances (2048 x 8192)", lambda b: kernels.closest_distances(q, t, backend=b)

    mesh = library_mesh(3)
    cam = look_at([0.0, -0.35, 0.3], [0.0, 0.0, 0.03])
    to_cam = Pose(cam.rotation.T, -cam.rotation.T @ cam.translation)
    verts = to_cam.apply(mesh.vertices + [0.0, 0.0, 0.055])
    intr = DEFAULT_INTRINSICS
    yield (f"rasterize ({len(mesh.faces)} faces, {intr.width}x{intr.height})",
           lambda b: kernels.rasterize(verts, mesh.faces, intr.fx, intr.fy, intr.cx, intr.cy,
                                       intr.width, intr.height, backend=b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional CSV of the timings")
    args = p.parse_args(argv)

    try:
        from sympose import _core  # noqa: F401
    except ImportError:
        print("compiled extension not built; run 'pip install -e . --no-build-isolation'",
              file=sys.stderr)
        return 1

    rows = []
    for name, fn in cases(np.random.default_rng(args.seed)):
        t_c, out_c = best_of(lambda: fn("compiled"), args.repeat)
        t_p, out_p = best_of(lambda: fn("python"), args.repeat)
        if not isinstance(out_c, tuple):
            out_c, out_p = (out_c,), (out_p,)
        same = all(np.array_equal(a, b) for a, b in zip(out_c, out_p))
        rows.append((name, t_c, t_p, t_p / t_c, same))
        print(f"{name:45s} compiled {t_c * 1e3:9.2f} ms   python {t_p * 1e3:9.2f} ms   "
              f"speedup {t_p / t_c:6.1f}x   identical={same}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kernel", "compiled_s", "python_s", "speedup", "identical"])
            w.writerows(rows)
    return 0 if all(r[4] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
