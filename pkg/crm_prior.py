"""
Priors of the Dirichlet mixture Poisson graph model: GEM stick-breaking over
edge clusters, gamma-process sociability weights and the total-mass density.

All samplers take a numpy Generator; callers own one per thread.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, xlogy

# Smallest weight kept strictly positive after log-space normalisation.
WEIGHT_FLOOR = np.finfo(np.float64).tiny
GEM_TOLERANCE = 1e-12


# --- TYPES ---
@dataclass(frozen=True)
class GemWeights:
    """pi[0] is the unassigned remainder, pi[1..K] the active cluster weights."""
    pi: np.ndarray
    alpha_dp: float

    @property
    def num_clusters(self) -> int:
        return int(self.pi.size - 1)


@dataclass(frozen=True)
class CrmWeights:
    """w[0] is the unobserved-mass slack, w[1..|V|] attach to observed nodes."""
    w: np.ndarray

    @property
    def total(self) -> float:
        return float(self.w.sum())

    @property
    def num_nodes(self) -> int:
        return int(self.w.size - 1)


# --- RANDOM HELPERS ---
def sample_log_gamma(shape, rng: np.random.Generator) -> np.ndarray:
    """
    log of Gamma(shape, 1) draws. Uses Gamma(a) = Gamma(a + 1) * U^(1/a) so
    small shapes do not underflow to exactly zero. Shape 0 gives -inf.
    """
    shape = np.asarray(shape, dtype=np.float64)
    out = np.full(shape.shape, -np.inf)
    positive = shape > 0
    a = shape[positive]
    log_g = np.log(rng.gamma(a + 1.0))
    log_u = np.log(rng.uniform(size=a.shape))
    out[positive] = log_g + log_u / a
    return out


def sample_dirichlet(concentration, rng: np.random.Generator) -> np.ndarray:
    """
    Dirichlet draw(s) normalised in log space. Works row-wise on 2-D input.
    Zero concentrations give exact zero weights, positive ones are floored
    at WEIGHT_FLOOR.
    """
    concentration = np.asarray(concentration, dtype=np.float64)
    if np.any(concentration < 0):
        raise ValueError("Dirichlet concentrations must be non-negative")
    if not np.all(np.any(concentration > 0, axis=-1)):
        raise ValueError("Dirichlet needs at least one positive concentration per row")
    log_g = sample_log_gamma(concentration, rng)
    log_norm = logsumexp(log_g, axis=-1, keepdims=True)
    weights = np.exp(log_g - log_norm)
    return np.where(concentration > 0, np.maximum(weights, WEIGHT_FLOOR), 0.0)


# --- GEM ---
def gem_from_breaks(breaks, alpha_dp: float) -> GemWeights:
    """pi_k = g_k * prod_{l<k}(1 - g_l); pi_0 = prod_{l<=K}(1 - g_l)."""
    breaks = np.asarray(breaks, dtype=np.float64)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - breaks)])
    pi = np.empty(breaks.size + 1)
    pi[1:] = breaks * remaining[:-1]
    pi[0] = remaining[-1]
    return GemWeights(pi, alpha_dp)


def sample_gem(alpha_dp: float, K: int, rng: np.random.Generator) -> GemWeights:
    if alpha_dp <= 0:
        raise ValueError(f"alpha_dp must be positive, got {alpha_dp}")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    return gem_from_breaks(rng.beta(1.0, alpha_dp, size=K), alpha_dp)


def stick_remainders(pi) -> np.ndarray:
    """R_{k-1} = pi_0 + sum_{l >= k} pi_l for k = 1..K: the stick left before break k."""
    pi = np.asarray(pi, dtype=np.float64)
    return np.cumsum(pi[:0:-1])[::-1] + pi[0]


def log_gem_density(pi, alpha_dp: float) -> float:
    """Truncated GEM log density: K log(alpha) + (alpha - 1) log pi_0 - sum_k log R_{k-1}."""
    pi = np.asarray(pi, dtype=np.float64)
    K = pi.size - 1
    with np.errstate(divide="ignore"):
        return float(K * np.log(alpha_dp) + xlogy(alpha_dp - 1.0, pi[0])
                     - np.sum(np.log(stick_remainders(pi))))


# --- GAMMA PROCESS ---
def log_levy_density(w):
    """log of the gamma-process Levy density s^-1 e^-s (unnormalised)."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("Levy density is only defined for w > 0")
    out = -np.log(w) - w
    return float(out) if out.ndim == 0 else out


def grad_log_levy_density(w):
    w = np.asarray(w, dtype=np.float64)
    return -1.0 / w - 1.0


def log_total_mass_density(wbar, kappa_mass: float):
    """log Gamma(kappa_mass, 1) density: exact total-mass law of the gamma process."""
    wbar = np.asarray(wbar, dtype=np.float64)
    if np.any(wbar <= 0):
        raise ValueError("Total-mass density is only defined for wbar > 0")
    out = (kappa_mass - 1.0) * np.log(wbar) - wbar - gammaln(kappa_mass)
    return float(out) if out.ndim == 0 else out


def grad_log_total_mass_density(wbar, kappa_mass: float):
    wbar = np.asarray(wbar, dtype=np.float64)
    return (kappa_mass - 1.0) / wbar - 1.0


def log_weight_density(w, shape: float):
    """
    log Gamma(shape, 1) density: the law of one slot of a gamma process cut
    into |V|+1 slots, shape = kappa_mass / (|V|+1). Divided by shape it tends
    to the Levy density as shape -> 0.
    """
    w = np.asarray(w, dtype=np.float64)
    out = log_levy_density(w) + shape * np.log(w) - gammaln(shape)
    return float(out) if np.ndim(out) == 0 else out


def grad_log_weight_density(w, shape: float):
    w = np.asarray(w, dtype=np.float64)
    return grad_log_levy_density(w) + shape / w


def slot_shape(kappa_mass: float, num_nodes: int) -> float:
    return kappa_mass / (num_nodes + 1)


def sample_w0(kappa_mass: float, num_nodes: int, rng: np.random.Generator) -> CrmWeights:
    """Total ~ Gamma(kappa_mass, 1) times symmetric Dirichlet over |V|+1 slots,
    equivalently |V|+1 independent Gamma(slot_shape) slots."""
    if kappa_mass <= 0:
        raise ValueError(f"kappa_mass must be positive, got {kappa_mass}")
    total = rng.gamma(kappa_mass)
    normalized = sample_dirichlet(np.full(num_nodes + 1, slot_shape(kappa_mass, num_nodes)), rng)
    return CrmWeights(np.maximum(total * normalized, WEIGHT_FLOOR))


def sample_wk_prior(w0: CrmWeights, rng: np.random.Generator) -> CrmWeights:
    """w_{k,i} ~ Gamma(w_{0,i}, 1) independently, slack slot included."""
    return CrmWeights(np.maximum(np.exp(sample_log_gamma(w0.w, rng)), WEIGHT_FLOOR))


@dataclass(frozen=True)
class GammaProcess:
    """Density interface shared by the samplers; other CRMs plug in here."""
    name: str = "gamma"

    def log_levy_density(self, w):
        return log_levy_density(w)

    def grad_log_levy_density(self, w):
        return grad_log_levy_density(w)

    def log_total_mass_density(self, wbar, kappa_mass):
        return log_total_mass_density(wbar, kappa_mass)

    def grad_log_total_mass_density(self, wbar, kappa_mass):
        return grad_log_total_mass_density(wbar, kappa_mass)

    def log_weight_density(self, w, shape):
        return log_weight_density(w, shape)

    def grad_log_weight_density(self, w, shape):
        return grad_log_weight_density(w, shape)

    def sample_w0(self, kappa_mass, num_nodes, rng):
        return sample_w0(kappa_mass, num_nodes, rng)


GAMMA_PROCESS = GammaProcess()
UNIMPLEMENTED_CRMS = ("stable", "inverse_gaussian")


def get_crm(name: str) -> GammaProcess:
    if name == "gamma":
        return GAMMA_PROCESS
    if name in UNIMPLEMENTED_CRMS:
        raise NotImplementedError(f"CRM '{name}' is not implemented; only 'gamma' is available")
    raise ValueError(f"Unknown CRM '{name}'")


def log_gamma_density(w, shape):
    """Gamma(shape, 1) log density, elementwise."""
    return stats.gamma.logpdf(w, a=shape)


def check_gem(gem: GemWeights) -> bool:
    ok = bool(np.all(gem.pi >= 0) and abs(gem.pi.sum() - 1.0) <= GEM_TOLERANCE)
    if not ok:
        logging.warning(f"GEM weights off the simplex: sum={gem.pi.sum():.3e}")
    return ok
