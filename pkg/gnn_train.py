"""
Full-batch node classification with SGC and APPNP backbones, on either the
baseline operator P~ or the edge-enhanced P^ built from DMPGM multiplicities.

Both backbones apply a symmetric linear operator M to the linear predictor XW:
    SGC:   logits = P^L (X W) + b
    APPNP: logits = APPNP_L(X W) + b
so the weight gradient is X^T M G with G the softmax residual.
"""

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import log_softmax, softmax
from tqdm import tqdm

from dmpgm_mcmc import SnapshotCycle
from graph_core import Dataset, MultiGraph, load_dataset
from virtual_propagation import (
    PropagationMatrix,
    appnp_propagate,
    build_p_hat,
    build_p_tilde,
    propagate,
)

# --- CONFIGURATION ---
BACKBONES = ("sgc", "appnp")
EDGE_MODES = ("baseline", "ee_sampled", "ee_mean")
MODEL_NAMES = {"sgc": "SGC", "appnp": "APPNP"}
REPORT_COLUMNS = ["model", "dataset", "layers", "mean_acc", "std_acc", "seeds"]


# --- ERRORS ---
class NonFiniteLossError(FloatingPointError):
    def __init__(self, seed, epoch, loss):
        super().__init__(f"Seed {seed}: loss became {loss} at epoch {epoch}")
        self.seed = seed
        self.epoch = epoch


class MissingPosteriorError(ValueError):
    """Edge-enhanced training requested without a multiplicity source."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 1000
    patience: int = 100
    seeds: tuple = (0,)
    backbone: str = "sgc"
    edge_mode: str = "baseline"
    layers: int = 2
    teleport_alpha: float = 0.1
    train_fraction: float = 0.6
    log_epochs: bool = False
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got '{self.backbone}'")
        if self.edge_mode not in EDGE_MODES:
            raise ValueError(f"edge_mode must be one of {EDGE_MODES}, got '{self.edge_mode}'")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError(f"patience must be in 1..max_epochs, got {self.patience}")
        if self.layers < 0:
            raise ValueError(f"layers must be non-negative, got {self.layers}")
        if not 0 < self.teleport_alpha < 1:
            raise ValueError(f"teleport_alpha must be in (0, 1), got {self.teleport_alpha}")
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not self.seeds:
            raise ValueError("At least one seed is required")
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")

    @property
    def model_name(self) -> str:
        name = MODEL_NAMES[self.backbone]
        return name if self.edge_mode == "baseline" else f"EE-{name}"


@dataclass
class SgcModel:
    W: np.ndarray
    b: np.ndarray
    layers: int

    @classmethod
    def initialize(cls, num_features: int, num_classes: int, layers: int, rng: np.random.Generator) -> "SgcModel":
        limit = np.sqrt(6.0 / (num_features + num_classes))
        return cls(rng.uniform(-limit, limit, size=(num_features, num_classes)), np.zeros(num_classes), layers)

    def copy(self) -> "SgcModel":
        return SgcModel(self.W.copy(), self.b.copy(), self.layers)


@dataclass
class SeedResult:
    seed: int
    accuracy: float
    epochs: int
    final_loss: float
    model: SgcModel
    loss_history: list = field(default_factory=list)


@dataclass
class TrainResult:
    config: TrainConfig
    results: list = field(default_factory=list)
    aborted: list = field(default_factory=list)

    @property
    def accuracies(self) -> dict:
        return {r.seed: r.accuracy for r in self.results}

    @property
    def models(self) -> dict:
        return {r.seed: r.model for r in self.results}


# --- FORWARD / BACKWARD ---
def _check_dims(P: PropagationMatrix, X, model: SgcModel) -> None:
    if X.shape[0] != P.num_nodes:
        raise ValueError(f"Features have {X.shape[0]} rows, operator has {P.num_nodes} nodes")
    if X.shape[1] != model.W.shape[0]:
        raise ValueError(f"Features have {X.shape[1]} columns, weights expect {model.W.shape[0]}")


def sgc_forward(P: PropagationMatrix, X, model: SgcModel) -> np.ndarray:
    """propagate(P, X, L) W + b, evaluated as propagate(P, X W, L) + b."""
    X = np.asarray(X, dtype=np.float64)
    _check_dims(P, X, model)
    return propagate(P, X @ model.W, model.layers) + model.b


def appnp_forward(P: PropagationMatrix, X, model: SgcModel, teleport_alpha: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check_dims(P, X, model)
    return appnp_propagate(P, X @ model.W, teleport_alpha, model.layers) + model.b


def _apply_operator(P, H, cfg: TrainConfig, layers: int) -> np.ndarray:
    if cfg.backbone == "appnp":
        return appnp_propagate(P, H, cfg.teleport_alpha, layers)
    return propagate(P, H, layers)


def forward(P, X, model: SgcModel, cfg: TrainConfig) -> np.ndarray:
    if cfg.backbone == "appnp":
        return appnp_forward(P, X, model, cfg.teleport_alpha)
    return sgc_forward(P, X, model)


def loss_and_gradients(P, X, y, train_mask, model: SgcModel, cfg: TrainConfig):
    """Mean cross-entropy on train nodes plus 0.5 * weight_decay * ||W||^2."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    train_idx = np.flatnonzero(train_mask)
    if train_idx.size == 0:
        raise ValueError("Training mask is empty")
    logits = forward(P, X, model, cfg)
    log_probs = log_softmax(logits[train_idx], axis=1)
    n = train_idx.size
    loss = -np.mean(log_probs[np.arange(n), y[train_idx]]) + 0.5 * cfg.weight_decay * np.sum(model.W ** 2)

    residual = np.zeros_like(logits)
    residual[train_idx] = softmax(logits[train_idx], axis=1)
    residual[train_idx, y[train_idx]] -= 1.0
    residual /= n
    grad_b = residual.sum(axis=0)
    grad_W = X.T @ _apply_operator(P, residual, cfg, model.layers) + cfg.weight_decay * model.W
    return float(loss), grad_W, grad_b


def evaluate_accuracy(logits, y, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("Evaluation mask is empty")
    predictions = np.argmax(np.asarray(logits)[mask], axis=1)
    return float(np.mean(predictions == np.asarray(y)[mask]))


def random_split(num_nodes: int, seed: int, train_fraction: float = 0.6) -> np.ndarray:
    """Boolean train mask; a pure function of (num_nodes, seed, train_fraction)."""
    rng = np.random.default_rng(seed)
    n_train = int(round(train_fraction * num_nodes))
    mask = np.zeros(num_nodes, dtype=bool)
    mask[rng.permutation(num_nodes)[:n_train]] = True
    return mask


# --- OPERATORS PER EDGE MODE ---
class OperatorProvider:
    """Yields the propagation operator for each epoch and for evaluation."""

    def __init__(self, dataset: Dataset, cfg: TrainConfig, source=None):
        self.cfg = cfg
        self.source = source
        self._cache = {}
        if cfg.edge_mode == "baseline":
            self.fixed = build_p_tilde(dataset.graph)
        elif source is None:
            raise MissingPosteriorError(f"edge_mode '{cfg.edge_mode}' needs a multiplicity source")
        elif cfg.edge_mode == "ee_mean":
            self.fixed = build_p_hat(_mean_multigraph(source))
        else:
            self.fixed = None
            if hasattr(source, "reset"):
                source.reset()
        if self.fixed is not None and self.fixed.num_nodes != dataset.graph.num_nodes:
            raise ValueError("Multiplicity source does not match the dataset graph")

    def for_epoch(self) -> PropagationMatrix:
        if self.fixed is not None:
            return self.fixed
        mg = self.source.sample()
        if not isinstance(self.source, SnapshotCycle):
            return build_p_hat(mg)
        key = id(mg)
        if key not in self._cache:
            self._cache[key] = (mg, build_p_hat(mg))
        return self._cache[key][1]

    def for_evaluation(self, last: PropagationMatrix) -> PropagationMatrix:
        if self.fixed is not None:
            return self.fixed
        if hasattr(self.source, "mean"):
            return build_p_hat(self.source.mean())
        return last


def _mean_multigraph(source) -> MultiGraph:
    if isinstance(source, MultiGraph):
        return source
    if hasattr(source, "mean"):
        return source.mean()
    raise MissingPosteriorError("ee_mean needs a posterior mean multigraph or a snapshot source")


# --- TRAINING ---
def train_seed(dataset: Dataset, cfg: TrainConfig, seed: int, source=None) -> SeedResult:
    rng = np.random.default_rng(seed)
    X, y = dataset.features, dataset.labels
    if dataset.train_mask is not None:
        train_mask = dataset.train_mask
    else:
        train_mask = random_split(dataset.graph.num_nodes, seed, cfg.train_fraction)
    test_mask = ~train_mask
    provider = OperatorProvider(dataset, cfg, source)
    model = SgcModel.initialize(X.shape[1], dataset.num_classes, cfg.layers, rng)

    best_loss, best_model, wait = np.inf, model.copy(), 0
    history = []
    P = provider.fixed
    epoch = 0
    for epoch in range(cfg.max_epochs):
        P = provider.for_epoch()
        loss, grad_W, grad_b = loss_and_gradients(P, X, y, train_mask, model, cfg)
        if not np.isfinite(loss):
            raise NonFiniteLossError(seed, epoch, loss)
        history.append(loss)
        if loss < best_loss:
            best_loss, best_model, wait = loss, model.copy(), 0
        else:
            wait += 1
            if wait >= cfg.patience:
                logging.info(f"Seed {seed}: early stop at epoch {epoch} (best loss {best_loss:.4f})")
                break
        model.W -= cfg.lr * grad_W
        model.b -= cfg.lr * grad_b

    P_eval = provider.for_evaluation(P)
    accuracy = evaluate_accuracy(forward(P_eval, X, best_model, cfg), y, test_mask)
    return SeedResult(seed, accuracy, epoch + 1, float(best_loss), best_model, history)


def train(dataset: Dataset, cfg: TrainConfig, source=None, show_progress: bool = True) -> TrainResult:
    """
    Trains one model per seed. Seeds whose loss turns non-finite are logged
    and skipped. Each seed gets its own copy of the multiplicity source.
    """
    if cfg.edge_mode != "baseline" and source is None:
        raise MissingPosteriorError(f"edge_mode '{cfg.edge_mode}' needs a multiplicity source")
    result = TrainResult(cfg)

    def run(seed):
        try:
            return train_seed(dataset, cfg, seed, copy.deepcopy(source))
        except NonFiniteLossError as e:
            logging.warning(f"Aborted seed {e.seed} at epoch {e.epoch}: {e}")
            return e

    desc = f"{cfg.model_name}/{cfg.layers} on {dataset.name}"
    if cfg.threads > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(tqdm(pool.map(run, cfg.seeds), total=len(cfg.seeds), desc=desc, disable=not show_progress))
    else:
        outcomes = [run(s) for s in tqdm(cfg.seeds, desc=desc, disable=not show_progress)]

    for seed, outcome in zip(cfg.seeds, outcomes):
        if isinstance(outcome, NonFiniteLossError):
            result.aborted.append(seed)
        else:
            result.results.append(outcome)
    accs = list(result.accuracies.values())
    if accs:
        logging.info(f"{desc}: accuracy {100 * np.mean(accs):.2f} ± {100 * np.std(accs):.2f} over {len(accs)} seeds")
    return result


def summarize(result: TrainResult, dataset_name: str) -> dict:
    accs = np.array(list(result.accuracies.values()), dtype=np.float64)
    return {
        "model": result.config.model_name,
        "dataset": dataset_name,
        "layers": result.config.layers,
        "mean_acc": float(100 * accs.mean()) if accs.size else float("nan"),
        "std_acc": float(100 * accs.std()) if accs.size else float("nan"),
        "seeds": int(accs.size),
    }


@dataclass
class BenchmarkReport:
    table: pd.DataFrame
    metadata: dict
    results: list = field(default_factory=list)


def run_benchmark(dataset_dir, cfg_grid, sources: dict | None = None, show_progress: bool = True) -> BenchmarkReport:
    """
    Runs every config in `cfg_grid` on one dataset directory. `sources` maps
    edge_mode to the multiplicity source used by that mode.
    """
    sources = sources or {}
    dataset = load_dataset(dataset_dir)
    rows, results, aborted = [], [], {}
    start = time.perf_counter()
    for cfg in cfg_grid:
        result = train(dataset, cfg, sources.get(cfg.edge_mode), show_progress)
        results.append(result)
        rows.append(summarize(result, dataset.name))
        if result.aborted:
            aborted[f"{cfg.model_name}/{cfg.layers}"] = result.aborted
    metadata = {
        "dataset": dataset.name,
        "wall_time_s": round(time.perf_counter() - start, 3),
        "aborted_seeds": aborted,
    }
    return BenchmarkReport(pd.DataFrame(rows, columns=REPORT_COLUMNS), metadata, results)


def report_table(report: pd.DataFrame) -> pd.DataFrame:
    """Rows = model/depth, columns = datasets, cells = 'mean ± std' in percent."""
    df = report.copy()
    df["cell"] = [f"{m:.2f} ± {s:.2f}" for m, s in zip(df["mean_acc"], df["std_acc"])]
    table = df.pivot_table(index=["model", "layers"], columns="dataset", values="cell", aggfunc="first")
    table.columns.name = None
    return table.reset_index()
