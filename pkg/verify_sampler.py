"""
Correctness checks for the DMPGM sampler and the classifier gradients.

Checks performed (each prints CHECK or FAIL):
    1. Geweke test: forward draws of (parameters, data) against the
       successive-conditional chain (sweep, regenerate data, repeat). Each
       statistic must agree within 3 standard errors (batch means on the chain).
    2. Gradient fidelity: HMC target gradient and classifier gradients against
       central finite differences.
    3. Truncated Poisson moments: sample mean against rate / (1 - e^-rate).

The Geweke chain runs with grow_clusters=False: K stays at k_max, the same
truncation the forward draws use, so every statistic has an exact target.
"""

import argparse
import logging

import numpy as np
from tabulate import tabulate
from tqdm import tqdm

from crm_prior import sample_w0
from dmpgm_generate import GenParams, multigraph_from_copies, sample_edge_copies, sample_parameters
from dmpgm_mcmc import (
    Tuning,
    W0Posterior,
    run_epoch,
    sample_truncated_poisson,
    state_from_copies,
)
from gnn_train import SgcModel, TrainConfig, loss_and_gradients
from graph_core import SimpleGraph, collapse
from virtual_propagation import build_p_tilde

# --- CONFIGURATION ---
GEWEKE_STATS = ["wbar0", "total_multiplicity", "active_K", "pi_1"]
Z_THRESHOLD = 3.0
GRADIENT_TOLERANCE = 1e-5
MOMENT_TOLERANCE = 0.01
BATCHES = 20
GEWEKE_TUNING = Tuning(hmc_step=0.2, hmc_leapfrog=10, mh_scale=0.3)


# --- GEWEKE ---
def _forward_statistics(pi, weights, copies) -> list:
    return [
        float(weights[0].sum()),
        float(copies.source.size),
        float(np.unique(copies.cluster).size),
        float(pi[1]) if pi.size > 1 else 0.0,
    ]


def _state_statistics(state) -> list:
    return [
        float(state.w[0].sum()),
        float(state.z.sum() + state.z_self.sum()),
        float(np.unique(state.labels).size),
        float(state.pi[1]) if state.K >= 1 else 0.0,
    ]


def _batch_standard_error(values: np.ndarray, batches: int = BATCHES) -> float:
    usable = values[: values.size - values.size % batches]
    means = usable.reshape(batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


def geweke_test(num_nodes=8, k_max=3, kappa_mass=4.0, alpha_dp=1.0, rounds=10_000, seed=0,
                show_progress=True) -> list:
    """Returns rows: statistic, forward mean, chain mean, z-score, CHECK/FAIL."""
    params = GenParams(alpha_dp, kappa_mass, k_max, num_nodes, seed)
    forward_rng, chain_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]

    forward = np.empty((rounds, len(GEWEKE_STATS)))
    for r in tqdm(range(rounds), desc="Geweke forward", disable=not show_progress):
        pi, weights = sample_parameters(params, forward_rng)
        forward[r] = _forward_statistics(pi, weights, sample_edge_copies(pi, weights, forward_rng))

    chain = np.empty_like(forward)
    pi, weights = sample_parameters(params, chain_rng)
    copies = sample_edge_copies(pi, weights, chain_rng)
    tuning = GEWEKE_TUNING
    for r in tqdm(range(rounds), desc="Geweke successive", disable=not show_progress):
        graph = collapse(multigraph_from_copies(num_nodes, copies.source, copies.target))
        state = state_from_copies(graph, pi, weights, copies.source, copies.target, copies.cluster,
                                  alpha_dp, kappa_mass, tuning)
        run_epoch(state, chain_rng, grow_clusters=False)
        chain[r] = _state_statistics(state)
        pi, weights = state.pi, state.w
        copies = sample_edge_copies(pi, weights, chain_rng)

    rows = []
    for s, name in enumerate(GEWEKE_STATS):
        se_forward = forward[:, s].std(ddof=1) / np.sqrt(rounds)
        se_chain = _batch_standard_error(chain[:, s])
        se = np.hypot(se_forward, se_chain)
        z = (forward[:, s].mean() - chain[:, s].mean()) / se if se > 0 else 0.0
        rows.append([name, forward[:, s].mean(), chain[:, s].mean(), z, "CHECK" if abs(z) < Z_THRESHOLD else "FAIL"])
    return rows


# --- GRADIENTS ---
def _relative_error(analytic, numeric) -> float:
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def _central_difference(fn, x, h):
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (fn(x + step) - fn(x - step)) / (2 * h)
    return grad


def random_w0_target(rng, num_nodes=8, num_clusters=3, kappa_mass=4.0):
    """An HMC target with random counts (slack column included) and its log-ratio point."""
    n_ki = rng.integers(0, 5, size=(num_clusters, num_nodes + 1))
    w0 = sample_w0(kappa_mass, num_nodes, rng).w
    w0 = np.maximum(w0, 1e-3)
    target = W0Posterior(n_ki, w0.sum(), kappa_mass)
    return target, np.log(w0[1:]) - np.log(w0[0])


def hmc_gradient_error(rng, h=1e-6) -> float:
    target, x = random_w0_target(rng)
    return _relative_error(target.gradient(x), _central_difference(target.log_density, x, h))


def classifier_gradient_error(rng, backbone="sgc", h=1e-6) -> float:
    num_nodes, num_features, num_classes = 6, 4, 3
    pairs = [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes) if rng.uniform() < 0.5]
    P = build_p_tilde(SimpleGraph.from_pairs(num_nodes, pairs))
    X = rng.normal(size=(num_nodes, num_features))
    y = rng.integers(0, num_classes, size=num_nodes)
    mask = np.ones(num_nodes, dtype=bool)
    cfg = TrainConfig(backbone=backbone, layers=2)
    model = SgcModel.initialize(num_features, num_classes, 2, rng)
    model.b = rng.normal(size=num_classes)
    _, grad_W, grad_b = loss_and_gradients(P, X, y, mask, model, cfg)

    def loss_at(theta):
        trial = SgcModel(theta[: model.W.size].reshape(model.W.shape), theta[model.W.size:], model.layers)
        return loss_and_gradients(P, X, y, mask, trial, cfg)[0]

    theta = np.concatenate([model.W.ravel(), model.b])
    numeric = _central_difference(loss_at, theta, h)
    return _relative_error(np.concatenate([grad_W.ravel(), grad_b]), numeric)


def gradient_check(n_points=100, n_classifier=20, seed=0) -> list:
    rng = np.random.default_rng(seed)
    hmc = max(hmc_gradient_error(rng) for _ in range(n_points))
    sgc = max(classifier_gradient_error(rng, "sgc") for _ in range(n_classifier))
    appnp = max(classifier_gradient_error(rng, "appnp") for _ in range(n_classifier))
    return [
        [name, err, "CHECK" if err < GRADIENT_TOLERANCE else "FAIL"]
        for name, err in (("HMC target", hmc), ("SGC classifier", sgc), ("APPNP classifier", appnp))
    ]


# --- TRUNCATED POISSON ---
def truncated_poisson_check(rates=(0.1, 1.0, 10.0), n=1_000_000, seed=0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for rate in rates:
        draws = sample_truncated_poisson(np.full(n, rate), rng)
        expected = rate / -np.expm1(-rate)
        rel = abs(draws.mean() - expected) / expected
        rows.append([rate, expected, draws.mean(), rel, "CHECK" if rel < MOMENT_TOLERANCE else "FAIL"])
    return rows


def main():
    parser = argparse.ArgumentParser(description="Sampler and gradient verification.")
    parser.add_argument("--rounds", type=int, default=10_000, help="Geweke rounds")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')

    print("\n\nGeweke test (|V|=8, k_max=3, kappa_mass=4, alpha_dp=1)")
    rows = geweke_test(rounds=args.rounds, seed=args.seed)
    print(tabulate(rows, headers=["Statistic", "Forward mean", "Chain mean", "z", "Result"], tablefmt="simple", floatfmt=".4f"))

    print("_" * 80)
    print("\n\nGradient fidelity (max relative error)")
    print(tabulate(gradient_check(seed=args.seed), headers=["Gradient", "Max rel. error", "Result"], tablefmt="simple", floatfmt=".2e"))

    print("_" * 80)
    print("\n\nTruncated Poisson mean")
    print(tabulate(truncated_poisson_check(seed=args.seed), headers=["Rate", "Expected", "Empirical", "Rel. error", "Result"], tablefmt="simple", floatfmt=".4f"))


if __name__ == "__main__":
    main()
