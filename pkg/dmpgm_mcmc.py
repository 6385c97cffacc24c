"""
Posterior inference for the Dirichlet mixture Poisson graph model given an
observed simple graph.

One epoch runs, in order:
    0. copies touching the slack slot, redrawn from their Poisson conditional
    1. HMC on the base weights w_{0,1..|V|} (log-ratio coordinates against the
       slack slot, wbar_0 fixed, normalised cluster rows integrated out)
    2. conjugate Dirichlet update of every normalised cluster row
    3. cluster weights pi: Dirichlet proposal with a Metropolis correction
       for the truncated GEM prior and the exp(-pi_k wbar_k^2) factor
    4. cluster labels of every edge copy, with cluster birth from slot 0
    5. multiplicities (truncated Poisson on observed edges, Poisson on
       self-loops), then empty-cluster pruning
    6. Metropolis-Hastings on the total masses wbar_k and wbar_0

With grow_clusters=False steps 4 and 5 keep K fixed (no births, no pruning)
and every step leaves the truncated model's posterior invariant; this is the
mode the joint-distribution test runs.

Edge copies are stored grouped by owner: owners 0..E-1 are the observed edges
in graph order, owners E..E+|V|-1 are the self-loops of nodes 0..|V|-1.
Slack copies are kept only as counts (slack_k, slack_ki).
Weights are a (K+1, |V|+1) matrix, row 0 = W_0, column 0 = slack slot.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import digamma, gammaln, logsumexp, xlogy
from tqdm import tqdm

from crm_prior import (
    CrmWeights,
    get_crm,
    log_gem_density,
    sample_dirichlet,
    sample_gem,
    sample_wk_prior,
    slot_shape,
    stick_remainders,
)
from graph_core import MultiGraph, SimpleGraph, load_multigraph, save_multigraph

# --- CONFIGURATION ---
RATE_FLOOR = 1e-300
HMC_TARGET_ACCEPT = 0.65
MH_TARGET_ACCEPT = 0.44
LIVE_CHAIN_NODE_LIMIT = 1000
TRACE_FILE = "trace.csv"
POSTERIOR_FILE = "posterior_multiplicity.txt"
HISTOGRAM_FILE = "multiplicity_histogram.csv"
SNAPSHOT_DIR = "snapshots"
SNAPSHOT_INDEX = "index.csv"
TRACE_COLUMNS = ["epoch", "log_joint", "K", "hmc_accept", "mh_accept", "edges_per_node"]


# --- ERRORS ---
class ChainAbortedError(RuntimeError):
    def __init__(self, message, last_good_epoch, trace):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.trace = trace


class EmptyTraceError(ValueError):
    """A trace without multiplicity snapshots."""


# --- CONFIG & STATE ---
@dataclass(frozen=True)
class ChainConfig:
    alpha_dp: float = 1.0
    kappa_mass: float = 20.0
    epochs: int = 1000
    burn_in_frac: float = 0.2
    thin: int = 10
    k_init: int = 5
    hmc_step: float = 0.01
    hmc_leapfrog: int = 10
    mh_scale: float = 0.1
    seed: int = 0
    crm: str = "gamma"
    adapt: bool = True
    grow_clusters: bool = True

    def __post_init__(self):
        for name in ("alpha_dp", "kappa_mass", "hmc_step", "mh_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "thin", "k_init", "hmc_leapfrog"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0 <= self.burn_in_frac < 1:
            raise ValueError(f"burn_in_frac must be in [0, 1), got {self.burn_in_frac}")
        get_crm(self.crm)

    @property
    def burn_in_epochs(self) -> int:
        return int(self.epochs * self.burn_in_frac)


@dataclass
class Tuning:
    hmc_step: float = 0.01
    hmc_leapfrog: int = 10
    mh_scale: float = 0.1


@dataclass
class McmcState:
    graph: SimpleGraph
    pi: np.ndarray
    w: np.ndarray
    z: np.ndarray
    z_self: np.ndarray
    labels: np.ndarray
    alpha_dp: float
    kappa_mass: float
    tuning: Tuning = field(default_factory=Tuning)
    crm_name: str = "gamma"
    n_k: np.ndarray = None
    n_ki: np.ndarray = None
    slack_k: np.ndarray = None
    slack_ki: np.ndarray = None
    owner_src: np.ndarray = field(init=False, repr=False)
    owner_dst: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.arange(self.graph.num_nodes) + 1
        self.owner_src = np.concatenate([self.graph.edges[:, 0] + 1, nodes])
        self.owner_dst = np.concatenate([self.graph.edges[:, 1] + 1, nodes])
        if self.n_k is None or self.n_ki is None:
            self.n_k, self.n_ki = recount(self)
        if self.slack_k is None or self.slack_ki is None:
            self.slack_k = np.zeros(self.K + 1, dtype=np.int64)
            self.slack_ki = np.zeros((self.K + 1, self.num_nodes + 1), dtype=np.int64)

    @property
    def K(self) -> int:
        return int(self.pi.size - 1)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def crm(self):
        return get_crm(self.crm_name)

    @property
    def total_k(self) -> np.ndarray:
        """Copies per cluster, slack copies included."""
        return self.n_k + self.slack_k

    @property
    def total_ki(self) -> np.ndarray:
        return self.n_ki + self.slack_ki

    def owner_counts(self) -> np.ndarray:
        return np.concatenate([self.z, self.z_self])

    def copy_owners(self) -> np.ndarray:
        counts = self.owner_counts()
        return np.repeat(np.arange(counts.size), counts)

    def copy(self) -> "McmcState":
        return McmcState(
            self.graph, self.pi.copy(), self.w.copy(), self.z.copy(), self.z_self.copy(),
            self.labels.copy(), self.alpha_dp, self.kappa_mass, replace(self.tuning),
            self.crm_name, self.n_k.copy(), self.n_ki.copy(), self.slack_k.copy(), self.slack_ki.copy(),
        )


def recount(state: McmcState) -> tuple[np.ndarray, np.ndarray]:
    """Cluster sizes n_k and per-node incidences n_ki (self-loops count twice)."""
    K, slots = state.K, state.num_nodes + 1
    owners = state.copy_owners()
    labels = state.labels
    n_k = np.bincount(labels, minlength=K + 1)[: K + 1]
    flat = np.concatenate([labels * slots + state.owner_src[owners], labels * slots + state.owner_dst[owners]])
    n_ki = np.bincount(flat, minlength=(K + 1) * slots).reshape(K + 1, slots)
    return n_k, n_ki


def counts_consistent(state: McmcState) -> bool:
    n_k, n_ki = recount(state)
    return bool(np.array_equal(n_k, state.n_k) and np.array_equal(n_ki, state.n_ki))


def _refresh_counts(state: McmcState) -> None:
    state.n_k, state.n_ki = recount(state)


# --- CONSTRUCTION ---
def state_from_copies(graph, pi, w, source, target, cluster, alpha_dp, kappa_mass,
                      tuning=None, crm_name="gamma") -> McmcState:
    """
    Builds a state from explicit ordered copies on observed nodes (0-based).
    Every off-diagonal copy must land on an edge of `graph`.
    """
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    cluster = np.asarray(cluster, dtype=np.int64)
    V, E = graph.num_nodes, graph.num_edges
    lo, hi = np.minimum(source, target), np.maximum(source, target)
    loop = lo == hi
    owners = np.empty(source.size, dtype=np.int64)
    owners[loop] = E + lo[loop]
    if np.any(~loop):
        edge_keys = graph.edges[:, 0] * V + graph.edges[:, 1]
        keys = lo[~loop] * V + hi[~loop]
        idx = np.searchsorted(edge_keys, keys)
        idx = np.minimum(idx, max(E - 1, 0))
        if E == 0 or np.any(edge_keys[idx] != keys):
            raise ValueError("Edge copies fall outside the observed graph")
        owners[~loop] = idx
    counts = np.bincount(owners, minlength=E + V)
    order = np.argsort(owners, kind="stable")
    return McmcState(
        graph, np.asarray(pi, dtype=np.float64).copy(), np.asarray(w, dtype=np.float64).copy(),
        counts[:E].astype(np.int64), counts[E:].astype(np.int64), cluster[order],
        alpha_dp, kappa_mass, tuning or Tuning(), crm_name,
    )


def init_state(g: SimpleGraph, alpha_dp: float, kappa_mass: float, K_init: int,
               rng: np.random.Generator, tuning: Tuning | None = None, crm_name: str = "gamma") -> McmcState:
    """Prior draws for pi and w, z = 1 on every edge, no self-loops, uniform labels."""
    if K_init < 1:
        raise ValueError(f"K_init must be at least 1, got {K_init}")
    w0 = get_crm(crm_name).sample_w0(kappa_mass, g.num_nodes, rng)
    w = np.empty((K_init + 1, g.num_nodes + 1))
    w[0] = w0.w
    for k in range(1, K_init + 1):
        w[k] = sample_wk_prior(w0, rng).w
    pi = sample_gem(alpha_dp, K_init, rng).pi
    labels = rng.integers(1, K_init + 1, size=g.num_edges)
    return McmcState(
        g, pi, w, np.ones(g.num_edges, dtype=np.int64), np.zeros(g.num_nodes, dtype=np.int64),
        labels.astype(np.int64), alpha_dp, kappa_mass, tuning or Tuning(), crm_name,
    )


# --- STEP 0: SLACK COPIES ---
def resample_slack_copies(state: McmcState, rng: np.random.Generator) -> McmcState:
    """
    Copies with an endpoint on the slack slot are unobserved, so given (pi, w)
    they are independent Poisson draws: pi_k w_k0^2 slack loops and
    2 pi_k w_k0 w_ki copies between the slack and node i.
    """
    K, slots = state.K, state.num_nodes + 1
    state.slack_k = np.zeros(K + 1, dtype=np.int64)
    state.slack_ki = np.zeros((K + 1, slots), dtype=np.int64)
    if K == 0:
        return state
    pi, w = state.pi[1:], state.w[1:]
    loops = rng.poisson(pi * w[:, 0] ** 2)
    cross = rng.poisson(2.0 * pi[:, None] * w[:, :1] * w[:, 1:])
    state.slack_ki[1:, 1:] = cross
    state.slack_ki[1:, 0] = 2 * loops + cross.sum(axis=1)
    state.slack_k[1:] = loops + cross.sum(axis=1)
    return state


# --- STEP 1: HMC ON W_0 ---
class W0Posterior:
    """
    Log posterior of the log-ratio coordinates u_i = log(w_0i / w_00), i = 1..|V|,
    given wbar_0 and the incidence counts (shape (K, |V|+1), column 0 = slack
    slot). The normalised cluster rows are integrated out (Dirichlet-multinomial
    terms) and every slot carries the Gamma(kappa_mass / (|V|+1)) slot law.
    Includes the Jacobian sum_i log w_0i over all |V|+1 slots. Every finite u maps
    to a W_0 with total wbar_0; weights that underflow to zero give -inf.
    """

    def __init__(self, n_ki, wbar0, kappa_mass, crm=None):
        n_ki = np.asarray(n_ki)
        self.crm = crm or get_crm("gamma")
        self.wbar0 = float(wbar0)
        self.kappa_mass = float(kappa_mass)
        self.num_slots = n_ki.shape[1]
        self.shape = slot_shape(self.kappa_mass, self.num_slots - 1)
        rows, cols = np.nonzero(n_ki)
        self.cols = cols
        self.counts = n_ki[rows, cols].astype(np.float64)
        self.const = n_ki.shape[0] * gammaln(self.wbar0) - float(np.sum(gammaln(self.wbar0 + n_ki.sum(axis=1))))

    def weights(self, u) -> np.ndarray:
        """All |V|+1 slots, slack first, summing to wbar_0."""
        logits = np.concatenate([[0.0], np.asarray(u, dtype=np.float64)])
        return self.wbar0 * np.exp(logits - logsumexp(logits))

    def log_density(self, u) -> float:
        w = self.weights(u)
        if not np.all((w > 0) & np.isfinite(w)):
            return -np.inf
        wc = w[self.cols]
        likelihood = np.sum(gammaln(wc + self.counts) - gammaln(wc))
        prior = np.sum(self.crm.log_weight_density(w, self.shape))
        return float(self.const + likelihood + prior + np.sum(np.log(w)))

    def gradient(self, u) -> np.ndarray:
        w = self.weights(u)
        if not np.all((w > 0) & np.isfinite(w)):
            return np.full(np.shape(u), np.nan)
        wc = w[self.cols]
        d_lik = np.bincount(self.cols, weights=digamma(wc + self.counts) - digamma(wc), minlength=self.num_slots)
        a = (d_lik + self.crm.grad_log_weight_density(w, self.shape)) * w + 1.0
        return a[1:] - (w[1:] / self.wbar0) * a.sum()


def hmc_step(log_density, gradient, x, step: float, n_leapfrog: int, rng: np.random.Generator):
    """One leapfrog trajectory with Metropolis correction. Returns (x, accepted)."""
    momentum0 = rng.standard_normal(x.size)
    current = log_density(x)
    grad = gradient(x)
    if not np.isfinite(current) or not np.all(np.isfinite(grad)):
        return x, False
    q = x.copy()
    p = momentum0 + 0.5 * step * grad
    for l in range(n_leapfrog):
        q = q + step * p
        grad = gradient(q)
        if not np.all(np.isfinite(grad)):
            return x, False
        p = p + (step if l < n_leapfrog - 1 else 0.5 * step) * grad
    proposed = log_density(q)
    if not np.isfinite(proposed):
        return x, False
    log_accept = proposed - current - 0.5 * (p @ p) + 0.5 * (momentum0 @ momentum0)
    if np.log(rng.uniform()) < log_accept:
        return q, True
    return x, False


def step1_hmc_w0(state: McmcState, rng: np.random.Generator) -> bool:
    """Updates w_{0,1..|V|} with wbar_0 held fixed; the slack absorbs the difference."""
    if state.num_nodes == 0:
        return True
    wbar0 = state.w[0].sum()
    target = W0Posterior(state.total_ki[1:], wbar0, state.kappa_mass, state.crm)
    u0 = np.log(state.w[0, 1:]) - np.log(state.w[0, 0])
    u, accepted = hmc_step(target.log_density, target.gradient, u0,
                           state.tuning.hmc_step, state.tuning.hmc_leapfrog, rng)
    if accepted:
        state.w[0] = np.maximum(target.weights(u), np.finfo(np.float64).tiny)
    return accepted


# --- STEP 2 & 3: CLUSTER ROWS AND WEIGHTS ---
def step2_gibbs_wk(state: McmcState, k: int, rng: np.random.Generator) -> McmcState:
    """w~_k ~ Dirichlet(w_0 + n_k), rescaled to keep wbar_k; n_k includes slack copies."""
    if not 1 <= k <= state.K:
        raise IndexError(f"Cluster {k} outside 1..{state.K}")
    total = state.w[k].sum()
    state.w[k] = total * sample_dirichlet(state.w[0] + state.total_ki[k], rng)
    return state


def step2_gibbs_all(state: McmcState, rng: np.random.Generator) -> McmcState:
    if state.K == 0:
        return state
    totals = state.w[1:].sum(axis=1, keepdims=True)
    state.w[1:] = totals * sample_dirichlet(state.w[0][None, :] + state.total_ki[1:], rng)
    return state


def step3_gibbs_pi(state: McmcState, rng: np.random.Generator) -> McmcState:
    """
    Proposes pi ~ Dirichlet(alpha_dp, N_1 + 1, ..., N_K + 1), N_k the copies of
    cluster k with slack copies included, and accepts it against the truncated
    GEM prior times prod_k pi_k^N_k exp(-pi_k wbar_k^2). The Dirichlet part
    cancels, leaving the stick remainders and the rate factor in the ratio.
    """
    concentration = state.total_k.astype(np.float64) + 1.0
    concentration[0] = state.alpha_dp
    proposal = sample_dirichlet(concentration, rng)
    wbar_sq = state.w[1:].sum(axis=1) ** 2

    def log_ratio(pi):
        with np.errstate(divide="ignore"):
            return float(-np.sum(np.log(stick_remainders(pi))) - np.sum(pi[1:] * wbar_sq))

    current = log_ratio(state.pi)
    if not np.isfinite(current) or np.log(rng.uniform()) < log_ratio(proposal) - current:
        state.pi = proposal
    return state


# --- STEP 4: CLUSTER LABELS ---
def _draw_labels(state: McmcState, src, dst, rng, allow_new: bool) -> np.ndarray:
    """Categorical draw of k in 0..K with p(k) proportional to pi_k w_ki w_kj."""
    with np.errstate(divide="ignore"):
        log_w = np.log(state.w)
        log_pi = np.log(state.pi)
    logp = (log_pi[:, None] + log_w[:, src] + log_w[:, dst]).T
    if not allow_new:
        logp[:, 0] = -np.inf
    top = logp.max(axis=1, keepdims=True)
    probs = np.exp(logp - top)
    cum = np.cumsum(probs, axis=1)
    u = rng.uniform(size=cum.shape[0]) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), state.K)


def _birth_cluster(state: McmcState, rng: np.random.Generator) -> int:
    row = sample_wk_prior(CrmWeights(state.w[0]), rng).w
    b = rng.beta(1.0, state.alpha_dp)
    new_pi = b * state.pi[0]
    state.pi = np.append(state.pi, new_pi)
    state.pi[0] = (1.0 - b) * state.pi[0]
    state.w = np.vstack([state.w, row])
    state.n_k = np.append(state.n_k, 0)
    state.n_ki = np.vstack([state.n_ki, np.zeros(state.n_ki.shape[1], dtype=state.n_ki.dtype)])
    state.slack_k = np.append(state.slack_k, 0)
    state.slack_ki = np.vstack([state.slack_ki, np.zeros(state.slack_ki.shape[1], dtype=state.slack_ki.dtype)])
    return state.K


def prune_empty_clusters(state: McmcState) -> McmcState:
    """
    Drops clusters without observed copies; pi_0 absorbs their mass and labels
    are compacted. Cluster 1 survives when every cluster is empty, so the
    self-loop rates stay positive and the chain can leave the empty state.
    """
    keep = np.concatenate([[True], state.n_k[1:] > 0])
    if state.K and not keep[1:].any():
        keep[1] = True
    if keep.all():
        return state
    removed_mass = state.pi[~keep].sum()
    relabel = np.cumsum(keep) - 1
    state.pi = state.pi[keep]
    state.pi[0] += removed_mass
    state.w = state.w[keep]
    state.labels = relabel[state.labels]
    state.n_k = state.n_k[keep]
    state.n_ki = state.n_ki[keep]
    state.slack_k = state.slack_k[keep]
    state.slack_ki = state.slack_ki[keep]
    return state


def step4_resample_clusters(state: McmcState, rng: np.random.Generator, grow: bool = True) -> McmcState:
    """
    Redraws every copy's label. With grow=True a draw of slot 0 births a cluster
    and empty clusters are pruned afterwards; with grow=False labels stay in 1..K.
    """
    owners = state.copy_owners()
    if owners.size == 0:
        return prune_empty_clusters(state) if grow else state
    src, dst = state.owner_src[owners], state.owner_dst[owners]
    labels = _draw_labels(state, src, dst, rng, allow_new=grow)
    if not grow:
        state.labels = labels
        _refresh_counts(state)
        return state
    born = np.flatnonzero(labels == 0)
    changed = False
    for c in born:
        k = labels[c]
        if changed:
            k = _draw_labels(state, src[c:c + 1], dst[c:c + 1], rng, allow_new=True)[0]
        if k == 0:
            k = _birth_cluster(state, rng)
            changed = True
        labels[c] = k
    if changed:
        # the first pass used the pre-birth pi; the other copies see the new clusters too
        rest = np.setdiff1d(np.arange(labels.size), born)
        labels[rest] = _draw_labels(state, src[rest], dst[rest], rng, allow_new=False)
    if born.size:
        logging.debug(f"Step 4: {born.size} copies drew the unassigned cluster, K now {state.K}")
    state.labels = labels
    _refresh_counts(state)
    return prune_empty_clusters(state)


# --- STEP 5: MULTIPLICITIES ---
def sample_truncated_poisson(rate, rng: np.random.Generator) -> np.ndarray:
    """
    Zero-truncated Poisson by survival-function inversion:
    z = isf(U * (1 - e^-rate)). Rates below RATE_FLOOR give z = 1 with a warning.
    """
    rate = np.asarray(rate, dtype=np.float64)
    out = np.ones(rate.shape, dtype=np.int64)
    healthy = rate >= RATE_FLOOR
    if not np.all(healthy):
        logging.warning(f"Truncated Poisson rate underflow on {int(np.sum(~healthy))} entries; forcing z = 1")
    r = rate[healthy]
    if r.size:
        q = (1.0 - rng.uniform(size=r.shape)) * -np.expm1(-r)
        draws = stats.poisson.isf(q, r)
        draws = np.where(np.isfinite(draws), draws, 1)
        out[healthy] = np.maximum(draws, 1).astype(np.int64)
    return out


def edge_rates(state: McmcState) -> tuple[np.ndarray, np.ndarray]:
    """Folded Poisson rates: 2 sum_k pi_k w_ki w_kj per edge, sum_k pi_k w_ki^2 per node."""
    pi, w = state.pi[1:, None], state.w[1:]
    E = state.graph.num_edges
    src, dst = state.owner_src[:E], state.owner_dst[:E]
    edge = 2.0 * np.sum(pi * w[:, src] * w[:, dst], axis=0)
    self_rate = np.sum(pi * w[:, 1:] ** 2, axis=0)
    return edge, self_rate


def step5_resample_multiplicities(state: McmcState, rng: np.random.Generator) -> McmcState:
    edge_rate, self_rate = edge_rates(state)
    z_new = sample_truncated_poisson(edge_rate, rng)
    z_self_new = rng.poisson(self_rate).astype(np.int64)

    old_counts = state.owner_counts()
    new_counts = np.concatenate([z_new, z_self_new])
    old_offsets = np.concatenate([[0], np.cumsum(old_counts)[:-1]]).astype(np.int64)
    new_offsets = np.concatenate([[0], np.cumsum(new_counts)[:-1]]).astype(np.int64)
    owners = np.repeat(np.arange(new_counts.size), new_counts)
    rank = np.arange(owners.size) - np.repeat(new_offsets, new_counts)
    kept = rank < old_counts[owners]

    labels = np.zeros(owners.size, dtype=np.int64)
    labels[kept] = state.labels[old_offsets[owners[kept]] + rank[kept]]
    fresh = np.flatnonzero(~kept)
    if fresh.size:
        o = owners[fresh]
        labels[fresh] = _draw_labels(state, state.owner_src[o], state.owner_dst[o], rng, allow_new=False)

    state.z, state.z_self, state.labels = z_new, z_self_new, labels
    _refresh_counts(state)
    return state


# --- STEP 6: TOTAL MASSES ---
def update_cluster_masses(state: McmcState, rng: np.random.Generator) -> np.ndarray:
    """
    Random walk on log wbar_k, k >= 1, against
    (2 N_k + wbar_0 - 1) log wbar_k - wbar_k - pi_k wbar_k^2 plus the log Jacobian,
    N_k counting slack copies. Returns per-cluster acceptance flags.
    """
    if state.K == 0:
        return np.empty(0, dtype=bool)
    wbar0 = state.w[0].sum()
    n = state.total_k[1:].astype(np.float64)
    pi = state.pi[1:]

    def log_target(y):
        return (2.0 * n + wbar0 - 1.0) * y - np.exp(y) - pi * np.exp(2.0 * y) + y

    y = np.log(state.w[1:].sum(axis=1))
    proposal = y + state.tuning.mh_scale * rng.standard_normal(y.size)
    with np.errstate(over="ignore", invalid="ignore"):
        log_accept = log_target(proposal) - log_target(y)
    accepted = np.log(rng.uniform(size=y.size)) < np.nan_to_num(log_accept, nan=-np.inf)
    factor = np.where(accepted, np.exp(proposal - y), 1.0)
    state.w[1:] *= factor[:, None]
    return accepted


def update_base_mass(state: McmcState, rng: np.random.Generator) -> bool:
    """
    Random walk on log wbar_0 with the normalised W_0 kept: the Gamma(kappa_mass)
    total-mass density times the Gamma(w_0i) densities of every cluster row.
    """
    crm = state.crm
    shape0 = state.w[0] / state.w[0].sum()
    rows = state.w[1:]

    def log_target(y):
        wbar0 = np.exp(y)
        if not np.isfinite(wbar0) or wbar0 <= 0:
            return -np.inf
        rows_term = float(np.sum(stats.gamma.logpdf(rows, a=wbar0 * shape0))) if state.K else 0.0
        return crm.log_total_mass_density(wbar0, state.kappa_mass) + rows_term + y

    y = np.log(state.w[0].sum())
    proposal = y + state.tuning.mh_scale * rng.standard_normal()
    with np.errstate(over="ignore", invalid="ignore"):
        log_accept = log_target(proposal) - log_target(y)
    if np.log(rng.uniform()) < np.nan_to_num(log_accept, nan=-np.inf):
        state.w[0] *= np.exp(proposal - y)
        return True
    return False


def step6_mh_masses(state: McmcState, rng: np.random.Generator) -> float:
    """Returns the acceptance fraction over the K + 1 proposals."""
    accepted_k = update_cluster_masses(state, rng)
    accepted_0 = update_base_mass(state, rng)
    return float((accepted_k.sum() + accepted_0) / (accepted_k.size + 1))


# --- DIAGNOSTICS ---
def log_likelihood(state: McmcState) -> float:
    """Complete-data log density of (z, c) given (pi, w) on observed edges and the diagonal."""
    E = state.graph.num_edges
    edge_rate, self_rate = edge_rates(state)
    with np.errstate(divide="ignore"):
        total = np.sum(xlogy(state.z, edge_rate) - edge_rate - gammaln(state.z + 1.0))
        total += np.sum(xlogy(state.z_self, self_rate) - self_rate - gammaln(state.z_self + 1.0))

        owners = state.copy_owners()
        if owners.size:
            labels = state.labels
            src, dst = state.owner_src[owners], state.owner_dst[owners]
            log_w = np.log(state.w)
            rate = np.concatenate([edge_rate, self_rate])[owners]
            fold = np.where(owners < E, np.log(2.0), 0.0)
            total += np.sum(fold + np.log(state.pi[labels]) + log_w[labels, src] + log_w[labels, dst] - np.log(rate))
    return float(total)


def log_prior(state: McmcState) -> float:
    """Truncated GEM on pi, Gamma(slot_shape) on every W_0 slot, Gamma(w_0i) on every cluster row."""
    crm = state.crm
    w0 = state.w[0]
    total = log_gem_density(state.pi, state.alpha_dp)
    total += np.sum(crm.log_weight_density(w0, slot_shape(state.kappa_mass, state.num_nodes)))
    if state.K:
        total += np.sum(stats.gamma.logpdf(state.w[1:], a=w0[None, :]))
    return float(total)


def log_joint(state: McmcState) -> float:
    return log_likelihood(state) + log_prior(state)


# --- CHAIN ---
def run_epoch(state: McmcState, rng: np.random.Generator, grow_clusters: bool = True) -> tuple[bool, float]:
    """Steps 0 to 6 once. Returns (HMC accepted, MH acceptance fraction)."""
    resample_slack_copies(state, rng)
    hmc_accepted = step1_hmc_w0(state, rng)
    step2_gibbs_all(state, rng)
    step3_gibbs_pi(state, rng)
    step4_resample_clusters(state, rng, grow=grow_clusters)
    step5_resample_multiplicities(state, rng)
    if grow_clusters:
        prune_empty_clusters(state)
    mh_accept = step6_mh_masses(state, rng)
    return hmc_accepted, mh_accept


def _adapt(value: float, rate: float, target: float, epoch: int) -> float:
    return float(value * np.exp((rate - target) / np.sqrt(epoch + 1.0)))


@dataclass(frozen=True)
class Snapshot:
    epoch: int
    z: np.ndarray
    z_self: np.ndarray


@dataclass
class ChainTrace:
    graph: SimpleGraph
    config: ChainConfig
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def burn_in_epochs(self) -> int:
        return self.config.burn_in_epochs

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=TRACE_COLUMNS)

    def acceptance_rates(self) -> dict:
        df = self.to_frame()
        return {"hmc": float(df["hmc_accept"].mean()), "mh": float(df["mh_accept"].mean())}


def edges_per_node(state: McmcState) -> float:
    """Mean of D-hat_i = sum_j z_ij with the diagonal counted once."""
    if state.num_nodes == 0:
        return 0.0
    return float((2 * state.z.sum() + state.z_self.sum()) / state.num_nodes)


def run_chain(g: SimpleGraph, config: ChainConfig, show_progress: bool = True) -> ChainTrace:
    rng = np.random.default_rng(config.seed)
    tuning = Tuning(config.hmc_step, config.hmc_leapfrog, config.mh_scale)
    state = init_state(g, config.alpha_dp, config.kappa_mass, config.k_init, rng, tuning, config.crm)
    trace = ChainTrace(g, config)
    burn_in = config.burn_in_epochs
    logging.info(
        f"Running chain: {config.epochs} epochs, burn-in {burn_in}, thin {config.thin}, "
        f"|V|={g.num_nodes}, |E|={g.num_edges}, K_init={config.k_init}"
    )
    hmc_window = []
    for epoch in tqdm(range(config.epochs), desc="MCMC epochs", disable=not show_progress):
        hmc_accepted, mh_accept = run_epoch(state, rng, config.grow_clusters)
        value = log_joint(state)
        if not np.isfinite(value):
            last_good = epoch - 1
            logging.error(f"Non-finite log joint at epoch {epoch}; last good epoch {last_good}")
            raise ChainAbortedError(f"log_joint is {value} at epoch {epoch}", last_good, trace)
        trace.records.append((epoch, value, state.K, float(hmc_accepted), mh_accept, edges_per_node(state)))

        if config.adapt and epoch < burn_in:
            hmc_window.append(float(hmc_accepted))
            recent = float(np.mean(hmc_window[-20:]))
            state.tuning.hmc_step = _adapt(state.tuning.hmc_step, recent, HMC_TARGET_ACCEPT, epoch)
            state.tuning.mh_scale = _adapt(state.tuning.mh_scale, mh_accept, MH_TARGET_ACCEPT, epoch)

        if (epoch + 1) % config.thin == 0 or epoch == config.epochs - 1:
            trace.snapshots.append(Snapshot(epoch, state.z.copy(), state.z_self.copy()))

    rates = trace.acceptance_rates()
    logging.info(
        f"Chain finished: K={state.K}, log joint {trace.records[-1][1]:.2f}, "
        f"HMC accept {rates['hmc']:.2f} (step {state.tuning.hmc_step:.2e}), "
        f"MH accept {rates['mh']:.2f} (scale {state.tuning.mh_scale:.2e})"
    )
    return trace


def _run_chain_quiet(args):
    g, config = args
    return run_chain(g, config, show_progress=False)


def run_chains(g: SimpleGraph, config: ChainConfig, n_chains: int, max_workers: int | None = None) -> list:
    """Independent chains in separate processes, seeds spawned from config.seed."""
    children = np.random.SeedSequence(config.seed).spawn(n_chains)
    configs = [replace(config, seed=int(child.generate_state(1)[0])) for child in children]
    if n_chains == 1 or max_workers == 1:
        return [run_chain(g, c) for c in configs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_chain_quiet, [(g, c) for c in configs]))


# --- POSTERIOR SUMMARIES ---
def snapshot_multigraph(graph: SimpleGraph, z, z_self) -> MultiGraph:
    nodes = np.arange(graph.num_nodes)
    pairs = np.concatenate([graph.edges, np.stack([nodes, nodes], axis=1)])
    counts = np.concatenate([np.asarray(z), np.asarray(z_self)])
    return MultiGraph(graph.num_nodes, pairs, counts)


def post_burn_in_snapshots(trace: ChainTrace, burn_in_frac: float | None = None) -> list:
    if not trace.snapshots:
        raise EmptyTraceError("Trace has no multiplicity snapshots")
    n_epochs = len(trace) or trace.config.epochs
    burn = trace.burn_in_epochs if burn_in_frac is None else int(n_epochs * burn_in_frac)
    kept = [s for s in trace.snapshots if s.epoch >= burn]
    if not kept:
        raise EmptyTraceError(f"No snapshot after burn-in epoch {burn}")
    return kept


def posterior_mean_multiplicity(trace: ChainTrace, burn_in_frac: float | None = None) -> MultiGraph:
    kept = post_burn_in_snapshots(trace, burn_in_frac)
    z = np.mean([s.z for s in kept], axis=0) if trace.graph.num_edges else np.empty(0)
    z_self = np.mean([s.z_self for s in kept], axis=0)
    return snapshot_multigraph(trace.graph, z, z_self)


def multiplicity_histogram(mg: MultiGraph, bins: int = 20) -> pd.DataFrame:
    """Histogram data for expected multiplicities of observed (off-diagonal) edges."""
    off = mg.pairs[:, 0] != mg.pairs[:, 1]
    values = mg.counts[off].astype(np.float64)
    if values.size == 0:
        return pd.DataFrame(columns=["bin_left", "bin_right", "count"])
    counts, edges = np.histogram(values, bins=bins)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


# --- EXPORTS ---
def save_trace(trace: ChainTrace, path) -> None:
    trace.to_frame().to_csv(path, index=False)


def save_posterior_multiplicity(mg: MultiGraph, path) -> None:
    """Writes `i j mean_mult` lines; diagonal entries are the `i i mean_self` lines."""
    save_multigraph(mg, path)


def save_snapshots(trace: ChainTrace, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, snap in enumerate(trace.snapshots):
        file_name = f"snapshot_{snap.epoch:07d}.txt"
        save_multigraph(snapshot_multigraph(trace.graph, snap.z, snap.z_self), out_dir / file_name)
        rows.append({
            "snapshot": idx,
            "epoch": snap.epoch,
            "file": file_name,
            "total_multiplicity": int(snap.z.sum() + snap.z_self.sum()),
            "post_burn_in": snap.epoch >= trace.burn_in_epochs,
        })
    pd.DataFrame(rows, columns=["snapshot", "epoch", "file", "total_multiplicity", "post_burn_in"]).to_csv(
        out_dir / SNAPSHOT_INDEX, index=False
    )
    logging.info(f"Saved {len(rows)} snapshots to {out_dir}")
    return out_dir


def load_snapshots(snapshot_dir, post_burn_in_only: bool = True) -> list:
    snapshot_dir = Path(snapshot_dir)
    index_path = snapshot_dir / SNAPSHOT_INDEX
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"Snapshot index not found: {index_path}")
    index = pd.read_csv(index_path)
    if post_burn_in_only and index["post_burn_in"].any():
        index = index[index["post_burn_in"]]
    return [load_multigraph(snapshot_dir / f) for f in index.sort_values("epoch")["file"]]


# --- MULTIPLICITY SOURCES FOR TRAINING ---
class SnapshotCycle:
    """Cycles through pre-computed multiplicity snapshots in order."""

    def __init__(self, snapshots: list):
        if not snapshots:
            raise EmptyTraceError("SnapshotCycle needs at least one snapshot")
        self.snapshots = list(snapshots)
        self.position = 0

    def reset(self) -> None:
        self.position = 0

    def sample(self) -> MultiGraph:
        mg = self.snapshots[self.position % len(self.snapshots)]
        self.position += 1
        return mg

    def mean(self) -> MultiGraph:
        first = self.snapshots[0]
        stacked = [dict(s.as_dict()) for s in self.snapshots]
        keys = sorted(set().union(*stacked))
        values = [np.mean([d.get(k, 0) for d in stacked]) for k in keys]
        return MultiGraph.from_mapping(first.num_nodes, dict(zip(keys, values)))


class LiveChain:
    """Runs one MCMC epoch per sample() on a small graph (fully interleaved mode)."""

    def __init__(self, graph: SimpleGraph, config: ChainConfig):
        if graph.num_nodes > LIVE_CHAIN_NODE_LIMIT:
            logging.warning(
                f"Live chain on {graph.num_nodes} nodes exceeds the intended limit of {LIVE_CHAIN_NODE_LIMIT}"
            )
        self.graph = graph
        self.config = config
        self.reset()

    def reset(self) -> None:
        self.rng = np.random.default_rng(self.config.seed)
        tuning = Tuning(self.config.hmc_step, self.config.hmc_leapfrog, self.config.mh_scale)
        self.state = init_state(self.graph, self.config.alpha_dp, self.config.kappa_mass,
                                self.config.k_init, self.rng, tuning, self.config.crm)

    def sample(self) -> MultiGraph:
        run_epoch(self.state, self.rng, self.config.grow_clusters)
        return snapshot_multigraph(self.graph, self.state.z, self.state.z_self)
