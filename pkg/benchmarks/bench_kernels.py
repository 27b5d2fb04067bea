"""Benchmark: compiled query kernels vs the pure-NumPy fallback.

Runs closest-point, first-hit ray, and crossing-parity queries over the
synthetic head at two subdivision levels, checks both backends agree, and
prints a timing table.

    python3 benchmarks/bench_kernels.py [--queries N]
"""

import argparse
import time

import numpy as np

from carimesh.kernels import get_backend
from carimesh.spatial import SpatialIndex
from carimesh.synth import head_template


def bench(backend, fn_name, args, repeats=3):
    fn = getattr(backend, fn_name)
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _check_agreement(kernel, a, b):
    """Backends may break exact distance ties differently, so face ids are
    only compared where the geometric answer is unambiguous."""
    tol = 1e-9
    if kernel == "closest_point":
        (pa, fa, da), (pb, fb, db) = a, b
        if np.abs(da - db).max() > tol:
            raise SystemExit(f"{kernel}: distances disagree")
        tied = fa != fb
        if np.abs(pa[~tied] - pb[~tied]).max() > tol:
            raise SystemExit(f"{kernel}: closest points disagree")
    elif kernel == "ray_first_hit":
        (ta, fa, ga), (tb, fb, gb) = a, b
        if not np.array_equal(ga, gb):
            raise SystemExit(f"{kernel}: degeneracy flags disagree")
        hit_a, hit_b = np.isfinite(ta), np.isfinite(tb)
        if not np.array_equal(hit_a, hit_b):
            raise SystemExit(f"{kernel}: hit masks disagree")
        if hit_a.any() and np.abs(ta[hit_a] - tb[hit_a]).max() > tol:
            raise SystemExit(f"{kernel}: hit distances disagree")
    elif kernel == "ray_crossings":
        (ca, ga), (cb, gb) = a, b
        clean = ~(ga | gb)
        if not np.array_equal(ca[clean], cb[clean]):
            raise SystemExit(f"{kernel}: crossing counts disagree")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--queries", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    backends = {}
    for name in ("compiled", "numpy"):
        try:
            backends[name] = get_backend(name)
        except (ImportError, ValueError):
            print(f"backend {name!r} unavailable, skipping")
    if "numpy" in backends and "compiled" not in backends:
        print("compiled extension missing: timings are fallback-only")

    print(f"{'mesh':>16} {'kernel':>14} {'backend':>9} {'queries':>8} "
          f"{'time':>9} {'Mq/s':>8}")
    for sub in (3, 4):
        mesh = head_template(sub)
        index = SpatialIndex(mesh)
        lo, hi = mesh.bounds()
        pts = lo + rng.random((args.queries, 3)) * (hi - lo)
        dirs = rng.normal(size=(args.queries, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = pts - 3.0 * dirs

        cases = {
            "closest_point": (pts, index.verts, index.tris, index),
            "ray_first_hit": (origins, dirs, index.verts, index.tris, index),
            "ray_crossings": (pts, dirs, index.verts, index.tris, index),
        }
        label = f"head[{mesh.n_faces} tris]"
        for kernel, call_args in cases.items():
            results = {}
            for name, backend in backends.items():
                dt, out = bench(backend, kernel, call_args)
                results[name] = out
                rate = args.queries / dt / 1e6
                print(f"{label:>16} {kernel:>14} {name:>9} {args.queries:>8} "
                      f"{dt:>8.3f}s {rate:>8.2f}")
            if len(results) == 2:
                _check_agreement(kernel, results["compiled"], results["numpy"])
                print(f"{'':>16} {'agreement ok':>14}")


if __name__ == "__main__":
    main()
