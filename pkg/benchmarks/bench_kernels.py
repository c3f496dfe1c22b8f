"""Compare the numba-compiled loop kernels with their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Run once with OPAC_NUMBA=0 to time the uncompiled configuration; in that mode
the loop kernels execute as plain Python.
"""

import argparse
import time

import numpy as np

from opac import kernels
from opac.envs import random_mdp
from opac.tabular import run_convergence_experiment


def best_of(fn, repeat):
    fn()  # warm-up (compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--tabular-steps", type=int, default=200_000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba compiled: {kernels.USE_NUMBA}")

    q = rng.normal(size=(4096, 3))
    series = rng.normal(size=10_000)
    mdp = random_mdp(0, 50, 5)
    Q = rng.normal(size=(50, 5))
    cases = [
        ("aggregate_rows median3 (4096x3)",
         lambda: kernels.aggregate_rows_loop(q, 1), lambda: kernels.aggregate_rows_vec(q, 1)),
        ("moving_average w=25 (10k)",
         lambda: kernels.moving_average_loop(series, 25), lambda: kernels.moving_average_vec(series, 25)),
        ("bellman_backup (50 states, 5 actions)",
         lambda: kernels.bellman_backup_loop(mdp.P, mdp.R, mdp.terminal, mdp.gamma, Q),
         lambda: kernels.bellman_backup_vec(mdp.P, mdp.R, mdp.terminal, mdp.gamma, Q)),
    ]
    print(f"{'kernel':<40} {'loop ms':>10} {'numpy ms':>10}")
    for name, loop, vec in cases:
        print(f"{name:<40} {best_of(loop, args.repeat) * 1e3:10.3f} {best_of(vec, args.repeat) * 1e3:10.3f}")

    tab = random_mdp(1, 6, 3)
    steps = args.tabular_steps if kernels.USE_NUMBA else min(args.tabular_steps, 20_000)
    t = best_of(lambda: run_convergence_experiment(tab, "median3", steps=steps, seed=0), 3)
    print(f"triple Q-learning, {steps} steps: {t * 1e3:.1f} ms ({t / steps * 1e9:.0f} ns/step)")


if __name__ == "__main__":
    main()
