"""Compare the compiled and numpy kernels on the metric hot paths.

    python3 benchmarks/bench_kernels.py [--sizes 256 1024 2500] [--repeat 3]

Both backends must return identical nearest neighbours; the auction costs are
checked against each other and (where small enough) the exact solver.
"""
import argparse
import json
import time

import numpy as np

from flowrecon import kernels, metrics


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_size(n, repeat, rng):
    a = rng.uniform(-1, 1, (n, 3))
    b = rng.uniform(-1, 1, (n, 3))
    cost = metrics.distance_matrix(a, b)
    row = {"n": n}
    results = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        t_nn, nn = best_time(lambda: kernels.nearest(a, b), repeat)
        # the numpy auction is slow at large n; one run is enough there
        t_auc, (assign, _) = best_time(lambda: kernels.auction(cost), 1 if backend == "python" and n > 1024 else repeat)
        results[backend] = (nn, cost[np.arange(n), assign].mean())
        row[f"{backend}_nearest_s"] = t_nn
        row[f"{backend}_auction_s"] = t_auc
    if len(results) == 2:
        (d0, i0), c0 = results["cython"]
        (d1, i1), c1 = results["python"]
        row["nearest_identical"] = bool(np.array_equal(d0, d1) and np.array_equal(i0, i1))
        row["auction_cost_gap"] = abs(c0 - c1)
        row["speedup_nearest"] = row["python_nearest_s"] / row["cython_nearest_s"]
        row["speedup_auction"] = row["python_auction_s"] / row["cython_auction_s"]
    if n <= metrics.EXACT_EMD_LIMIT:
        exact = metrics.emd_exact(a, b)[0]
        row["auction_rel_excess"] = max(c for _, c in results.values()) / exact - 1.0
    return row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2500])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write rows to this file")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    prev = kernels.BACKEND
    rows = [bench_size(n, args.repeat, rng) for n in args.sizes]
    kernels.set_backend(prev)

    print(f"backends: {', '.join(kernels.available_backends())}")
    print(f"{'n':>6} {'kd cy (ms)':>11} {'kd py (ms)':>11} {'x':>6} {'auc cy (ms)':>12} {'auc py (ms)':>12} {'x':>6}")
    for r in rows:
        cy_nn = r.get("cython_nearest_s", np.nan) * 1e3
        cy_auc = r.get("cython_auction_s", np.nan) * 1e3
        print(f"{r['n']:>6} {cy_nn:>11.2f} {r['python_nearest_s'] * 1e3:>11.2f} {r.get('speedup_nearest', np.nan):>6.1f} "
              f"{cy_auc:>12.2f} {r['python_auction_s'] * 1e3:>12.2f} {r.get('speedup_auction', np.nan):>6.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
