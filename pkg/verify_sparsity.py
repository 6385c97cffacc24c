"""
Empirical sparsity and per-epoch cost checks.

    1. Sparsity: slope of log|E| against log|V_active| over a kappa_mass grid,
       repeated over several seeds. CHECK when the mean slope is below 1.9 and
       its spread across seeds is below 0.1.
    2. Scaling: per-epoch sampler wall time against |E| on generated graphs.
       CHECK when the log-log slope is within 1.0 +/- 0.2.
"""

import argparse
import logging
import time

import numpy as np
from tabulate import tabulate
from tqdm import tqdm

from dmpgm_generate import GenParams, generate_simple, sparsity_bench
from dmpgm_mcmc import init_state, run_epoch

# --- CONFIGURATION ---
KAPPA_GRID = (5.0, 10.0, 20.0, 40.0, 80.0)
SLOPE_LIMIT = 1.9
SLOPE_SPREAD_LIMIT = 0.1
SCALING_KAPPAS = (40.0, 80.0, 160.0, 320.0, 640.0)
SCALING_TARGET, SCALING_TOLERANCE = 1.0, 0.2


def sparsity_check(kappa_grid=KAPPA_GRID, reps=5, seeds=10, num_nodes=5000, k_gen=20, alpha_dp=1.0) -> tuple:
    """Returns (per-seed rows, summary row)."""
    rows = []
    for seed in tqdm(range(seeds), desc="Sparsity seeds"):
        fit = sparsity_bench(GenParams(alpha_dp, kappa_grid[0], k_gen, num_nodes, seed), kappa_grid, reps,
                             show_progress=False)
        rows.append([seed, fit.slope, fit.intercept])
    slopes = np.array([r[1] for r in rows])
    ok = slopes.mean() < SLOPE_LIMIT and slopes.std(ddof=1) < SLOPE_SPREAD_LIMIT
    summary = [slopes.mean(), slopes.std(ddof=1), "CHECK" if ok else "FAIL"]
    return rows, summary


def time_epochs(graph, epochs=3, seed=0) -> float:
    rng = np.random.default_rng(seed)
    state = init_state(graph, 1.0, 20.0, 5, rng)
    run_epoch(state, rng)
    start = time.perf_counter()
    for _ in range(epochs):
        run_epoch(state, rng)
    return (time.perf_counter() - start) / epochs


def scaling_check(kappas=SCALING_KAPPAS, num_nodes=20000, epochs=3, seed=0) -> tuple:
    rows = []
    for kappa in tqdm(kappas, desc="Scaling graphs"):
        graph = generate_simple(GenParams(1.0, kappa, 20, num_nodes, seed), np.random.default_rng(seed))
        if graph.num_edges == 0:
            continue
        rows.append([kappa, graph.num_edges, time_epochs(graph, epochs, seed)])
    if len(rows) < 2:
        return rows, [float("nan"), "FAIL"]
    edges = np.log([r[1] for r in rows])
    seconds = np.log([r[2] for r in rows])
    slope = float(np.polyfit(edges, seconds, 1)[0])
    return rows, [slope, "CHECK" if abs(slope - SCALING_TARGET) <= SCALING_TOLERANCE else "FAIL"]


def main():
    parser = argparse.ArgumentParser(description="Sparsity slope and per-epoch scaling checks.")
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--reps", type=int, default=5)
    parser.add_argument("--skip-scaling", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')

    rows, summary = sparsity_check(reps=args.reps, seeds=args.seeds)
    print("\n\nSparsity slope log|E| ~ log|V_active| over kappa_mass grid", KAPPA_GRID)
    print(tabulate(rows, headers=["Seed", "Slope", "Intercept"], tablefmt="simple", floatfmt=".3f"))
    print(tabulate([summary], headers=["Mean slope", "Std", "Result"], tablefmt="simple", floatfmt=".3f"))

    if not args.skip_scaling:
        print("_" * 80)
        rows, summary = scaling_check()
        print("\n\nPer-epoch wall time against |E|")
        print(tabulate(rows, headers=["kappa_mass", "|E|", "Seconds/epoch"], tablefmt="simple", floatfmt=".4f"))
        print(tabulate([summary], headers=["Log-log slope", "Result"], tablefmt="simple", floatfmt=".3f"))


if __name__ == "__main__":
    main()
