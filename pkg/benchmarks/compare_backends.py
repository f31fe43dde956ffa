"""Time the numba-jitted kernels against the pure-numpy fallback.

Run both in-process by spawning a subprocess with MOMENTBAND_BACKEND=numpy
(the backend is chosen at import time):

    python benchmarks/compare_backends.py [--n 2000] [--trees 400]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def run_case(n, trees, repeats):
    from momentband import accel
    from momentband.data import make_query_grid
    from momentband.estimator import solve_queries
    from momentband.kernels import ForestConfig, fit_forest

    rng = np.random.default_rng(0)
    x = rng.random((n, 1))
    y = x[:, 0] + 0.2 * rng.standard_normal(n)
    b = max(4, n // 20)
    cfg = ForestConfig(b=b, trees=trees, min_leaf=5)
    grid = make_query_grid([(0.0, 1.0)], [25])
    m1 = np.full(n, -1.0)

    fit_forest(x, y, cfg, 1)  # warm the JIT cache
    t0 = time.perf_counter()
    for s in range(repeats):
        forest = fit_forest(x, y, cfg, s)
    grow = (time.perf_counter() - t0) / repeats

    solve_queries(forest, grid, m1, y)
    t0 = time.perf_counter()
    for _ in range(repeats):
        solve_queries(forest, grid, m1, y)
    solve = (time.perf_counter() - t0) / repeats

    knn_cfg = ForestConfig(kind="knn", b=b, trees=trees, knn_k=min(10, b))
    knn = fit_forest(x, y, knn_cfg, 1)
    solve_queries(knn, grid, m1, y)
    t0 = time.perf_counter()
    for _ in range(repeats):
        solve_queries(knn, grid, m1, y)
    knn_solve = (time.perf_counter() - t0) / repeats
    return {"backend": accel.BACKEND, "grow_s": grow, "solve_s": solve,
            "knn_solve_s": knn_solve}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--trees", type=int, default=400)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--emit-json", action="store_true",
                    help="print one JSON line and exit (used by the subprocess)")
    args = ap.parse_args()

    if args.emit_json:
        print(json.dumps(run_case(args.n, args.trees, args.repeats)))
        return

    results = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, MOMENTBAND_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, __file__, "--n", str(args.n), "--trees",
             str(args.trees), "--repeats", str(args.repeats), "--emit-json"],
            env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"n={args.n} trees={args.trees} (mean of {args.repeats} runs)")
    print(f"{'backend':<8} {'grow forest':>14} {'tree solve':>13} {'knn solve':>12}")
    for r in results:
        print(f"{r['backend']:<8} {r['grow_s']:>12.4f} s {r['solve_s']:>11.4f} s "
              f"{r['knn_solve_s']:>10.4f} s")
    if results[0]["backend"] != results[1]["backend"]:
        g = results[1]["grow_s"] / results[0]["grow_s"]
        s = results[1]["solve_s"] / results[0]["solve_s"]
        k = results[1]["knn_solve_s"] / results[0]["knn_solve_s"]
        print(f"speedup (numba over numpy): grow {g:.1f}x, tree solve {s:.1f}x, "
              f"knn solve {k:.1f}x")


if __name__ == "__main__":
    main()
