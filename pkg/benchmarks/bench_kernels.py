"""Compare the compiled layer-split kernels against the pure Python twin.

Runs the same workload under both backends and prints per-kernel timings
plus an end-to-end plan search.  The backend is chosen at import time, so
the script re-executes itself with HETEROPLAN_PURE_PYTHON=1 to collect the
fallback numbers.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import json
import os
import random
import subprocess
import sys
import time


def _workloads(rng: random.Random, count: int) -> list[tuple]:
    cases = []
    for _ in range(count):
        n = rng.randint(2, 6)
        pp = [rng.choice([1, 2, 2, 4, 8]) for _ in range(n)]
        comp = [rng.uniform(0.02, 0.6) for _ in range(n)]
        upd = [rng.uniform(0.0, 0.1) for _ in range(n)]
        kmax = [rng.randint(2, 12) for _ in range(n)]
        total = sum(p * rng.randint(1, 4) for p in pp) + rng.randint(0, 8)
        micro = rng.choice([2, 4, 8, 16])
        cases.append((pp, comp, upd, kmax, total, micro, 1.0))
    return cases


def run_benchmarks(repeat: int) -> dict[str, float]:
    from heteroplan import _core
    from heteroplan.instances import random_instance
    from heteroplan.search import search_plan, InfeasibleError

    rng = random.Random(20240817)
    cases = _workloads(rng, 400)

    t0 = time.perf_counter()
    for _ in range(repeat):
        for pp, comp, upd, kmax, total, micro, alpha in cases:
            _core.solve_layer_split(pp, comp, upd, kmax, total, micro, alpha)
    t_solve = (time.perf_counter() - t0) / repeat

    t0 = time.perf_counter()
    for _ in range(repeat):
        for pp, comp, upd, kmax, total, micro, alpha in cases:
            _core.split_lower_bound(pp, comp, upd, kmax, total, micro, alpha)
    t_bound = (time.perf_counter() - t0) / repeat

    instances = [random_instance(seed) for seed in range(20)]
    t0 = time.perf_counter()
    for cluster, profile, workload in instances:
        try:
            search_plan(cluster, profile, workload, workers=1)
        except InfeasibleError:
            pass
    t_search = time.perf_counter() - t0

    return {
        "backend": _core.BACKEND,
        "solve_layer_split_400": t_solve,
        "split_lower_bound_400": t_bound,
        "search_plan_20": t_search,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="timing repetitions per kernel batch")
    parser.add_argument("--inner", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.inner:
        print(json.dumps(run_benchmarks(args.repeat)))
        return 0

    results = []
    for pure in ("0", "1"):
        env = dict(os.environ, HETEROPLAN_PURE_PYTHON=pure)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--inner", "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    fast, slow = results
    if fast["backend"] == slow["backend"]:
        print(f"only the '{fast['backend']}' backend is available; install with the")
        print("C extension built to compare both")
    print(f"{'kernel':<26} {fast['backend']:>12} {slow['backend']:>12} {'ratio':>8}")
    for key in ("solve_layer_split_400", "split_lower_bound_400", "search_plan_20"):
        a, b = fast[key], slow[key]
        ratio = b / a if a > 0 else float("inf")
        print(f"{key:<26} {a:>11.4f}s {b:>11.4f}s {ratio:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
