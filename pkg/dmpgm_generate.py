"""
Forward simulation of DMPGM multigraphs and simple graphs, plus the empirical
sparsity bench (log|E| against log|V_active| over a kappa grid).

Weights are handled as a (K+1, |V|+1) matrix: row 0 is W_0, column 0 is the
slack slot for unobserved nodes. Generated edges are ordered pairs folded into
unordered multiplicities, so for i != j the folded rate is
2 * sum_k pi_k w_ki w_kj and for i == j it is sum_k pi_k w_ki^2.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from crm_prior import sample_gem, sample_w0, sample_wk_prior
from graph_core import MultiGraph, SimpleGraph, collapse

# --- CONFIGURATION ---
DENSE_NODE_LIMIT = 200
GROWTH_KNOB = "kappa_mass"


class DegenerateFitError(ValueError):
    """The sparsity fit cannot be computed (empty graphs or constant sizes)."""


@dataclass(frozen=True)
class GenParams:
    alpha_dp: float = 1.0
    kappa_mass: float = 20.0
    k_gen: int = 20
    num_nodes: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha_dp", "kappa_mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.k_gen < 1:
            raise ValueError(f"k_gen must be at least 1, got {self.k_gen}")
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be positive, got {self.num_nodes}")


@dataclass(frozen=True)
class EdgeCopies:
    """Ordered edge copies on observed nodes (0-based ids) with cluster labels 1..K."""
    source: np.ndarray
    target: np.ndarray
    cluster: np.ndarray
    num_drawn: int
    discarded: int


@dataclass(frozen=True)
class GeneratedMultigraph:
    multigraph: MultiGraph
    rate: float
    num_drawn: int
    discarded: int
    pi: np.ndarray
    weights: np.ndarray


# --- PRIOR DRAWS ---
def sample_parameters(p: GenParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draws (pi, weights) with pi of length K+1 and weights of shape (K+1, |V|+1)."""
    gem = sample_gem(p.alpha_dp, p.k_gen, rng)
    w0 = sample_w0(p.kappa_mass, p.num_nodes, rng)
    weights = np.empty((p.k_gen + 1, p.num_nodes + 1))
    weights[0] = w0.w
    for k in range(1, p.k_gen + 1):
        weights[k] = sample_wk_prior(w0, rng).w
    return gem.pi, weights


def edge_rate(pi, weights) -> float:
    """lambda = sum_{k>=1} pi_k * wbar_k^2 (ordered-pair edge count rate)."""
    pi = np.asarray(pi, dtype=np.float64)
    totals = np.asarray(weights, dtype=np.float64)[1:].sum(axis=1)
    return float(np.sum(pi[1:] * totals ** 2))


# --- GENERATION ---
def sample_edge_copies(pi, weights, rng: np.random.Generator) -> EdgeCopies:
    """
    Draws n ~ Poisson(lambda), a cluster per edge with probability
    pi_k wbar_k^2 / lambda and both endpoints from w_k / wbar_k. Copies with
    an endpoint in the slack slot are discarded.
    """
    pi = np.asarray(pi, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    totals = weights[1:].sum(axis=1)
    cluster_rates = pi[1:] * totals ** 2
    lam = float(cluster_rates.sum())
    n = int(rng.poisson(lam)) if lam > 0 else 0
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return EdgeCopies(empty, empty, empty, 0, 0)

    per_cluster = rng.multinomial(n, cluster_rates / lam)
    sources, targets, clusters = [], [], []
    for k in np.flatnonzero(per_cluster):
        probs = weights[k + 1] / totals[k]
        ends = rng.choice(probs.size, size=(per_cluster[k], 2), p=probs)
        sources.append(ends[:, 0])
        targets.append(ends[:, 1])
        clusters.append(np.full(per_cluster[k], k + 1, dtype=np.int64))
    source = np.concatenate(sources)
    target = np.concatenate(targets)
    cluster = np.concatenate(clusters)

    observed = (source > 0) & (target > 0)
    discarded = int(n - observed.sum())
    return EdgeCopies(source[observed] - 1, target[observed] - 1, cluster[observed], n, discarded)


def multigraph_from_copies(num_nodes: int, source, target) -> MultiGraph:
    """Folds ordered copies into unordered multiplicities (diagonal kept)."""
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    if source.size == 0:
        return MultiGraph(num_nodes, np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64))
    pairs = np.stack([np.minimum(source, target), np.maximum(source, target)], axis=1)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return MultiGraph(num_nodes, unique, counts.astype(np.int64))


def generate_multigraph_from_weights(pi, weights, rng: np.random.Generator) -> GeneratedMultigraph:
    weights = np.asarray(weights, dtype=np.float64)
    num_nodes = weights.shape[1] - 1
    copies = sample_edge_copies(pi, weights, rng)
    mg = multigraph_from_copies(num_nodes, copies.source, copies.target)
    return GeneratedMultigraph(mg, edge_rate(pi, weights), copies.num_drawn, copies.discarded,
                               np.asarray(pi), weights)


def generate_multigraph(p: GenParams, rng: np.random.Generator) -> GeneratedMultigraph:
    pi, weights = sample_parameters(p, rng)
    result = generate_multigraph_from_weights(pi, weights, rng)
    logging.info(
        f"Generated multigraph: lambda={result.rate:.2f}, drawn={result.num_drawn}, "
        f"discarded on slack slot={result.discarded}, stored pairs={result.multigraph.pairs.shape[0]}"
    )
    return result


def generate_simple(p: GenParams, rng: np.random.Generator) -> SimpleGraph:
    return collapse(generate_multigraph(p, rng).multigraph)


def generate_multigraph_dense(pi, weights, rng: np.random.Generator) -> MultiGraph:
    """
    Pairwise Poisson scan over unordered pairs. Costs
    O(K |V|^2) so it is limited to DENSE_NODE_LIMIT nodes.
    """
    pi = np.asarray(pi, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    num_nodes = weights.shape[1] - 1
    if num_nodes > DENSE_NODE_LIMIT:
        raise ValueError(f"Dense generation is limited to {DENSE_NODE_LIMIT} nodes, got {num_nodes}")
    w = weights[1:, 1:]
    rates = np.einsum("k,ki,kj->ij", pi[1:], w, w)
    upper_i, upper_j = np.triu_indices(num_nodes)
    folded = np.where(upper_i == upper_j, 1.0, 2.0) * rates[upper_i, upper_j]
    counts = rng.poisson(folded)
    return MultiGraph(num_nodes, np.stack([upper_i, upper_j], axis=1), counts.astype(np.int64))


# --- SPARSITY BENCH ---
@dataclass(frozen=True)
class SparsityFit:
    slope: float
    intercept: float
    points: pd.DataFrame
    growth_knob: str = GROWTH_KNOB


def sparsity_bench(p: GenParams, kappa_grid, reps: int, show_progress: bool = True) -> SparsityFit:
    """
    For each kappa, generates `reps` simple graphs and records the mean active
    node count and edge count; returns the least-squares slope of log|E| on
    log|V_active|. kappa_mass is the growth knob.
    """
    kappa_grid = [float(k) for k in kappa_grid]
    if len(kappa_grid) < 3:
        raise ValueError("sparsity_bench needs at least 3 grid points")
    if reps < 5:
        raise ValueError("sparsity_bench needs at least 5 replicates")
    if np.ptp(kappa_grid) == 0:
        raise DegenerateFitError(f"Constant {GROWTH_KNOB} grid {kappa_grid}; slope undefined")

    seeds = np.random.SeedSequence(p.seed).spawn(len(kappa_grid) * reps)
    rows = []
    progress = tqdm(total=len(seeds), desc="Sparsity bench", disable=not show_progress)
    for g_idx, kappa in enumerate(kappa_grid):
        params = GenParams(p.alpha_dp, kappa, p.k_gen, p.num_nodes, p.seed)
        active, edges = [], []
        for r in range(reps):
            rng = np.random.default_rng(seeds[g_idx * reps + r])
            pi, weights = sample_parameters(params, rng)
            graph = collapse(generate_multigraph_from_weights(pi, weights, rng).multigraph)
            if graph.num_edges == 0:
                raise DegenerateFitError(f"Empty graph generated at kappa_mass={kappa} (replicate {r})")
            active.append(int(np.sum(graph.degrees() > 0)))
            edges.append(graph.num_edges)
            progress.update(1)
        rows.append({"kappa_mass": kappa, "mean_active_nodes": float(np.mean(active)),
                     "mean_edges": float(np.mean(edges))})
    progress.close()

    points = pd.DataFrame(rows)
    log_v = np.log(points["mean_active_nodes"].to_numpy())
    log_e = np.log(points["mean_edges"].to_numpy())
    if np.ptp(log_v) < 1e-12:
        raise DegenerateFitError("Active node counts are constant across the grid; slope undefined")
    slope, intercept = np.polyfit(log_v, log_e, 1)
    logging.info(f"Sparsity slope over {GROWTH_KNOB} grid {kappa_grid}: {slope:.3f}")
    return SparsityFit(float(slope), float(intercept), points)
