"""
Propagation operators for graph neural networks: the self-loop-augmented
baseline P~ = (D+I)^-1/2 (A+I) (D+I)^-1/2 and the edge-enhanced
P^ = D^-1/2 A^ D^-1/2 built from a virtual multigraph (diagonal included, no
identity added on top).
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from graph_core import MultiGraph, SimpleGraph

# --- CONFIGURATION ---
DENSE_FALLBACK_NODES = 64
OPERATOR_KINDS = ("p_tilde", "p_hat")


@dataclass(frozen=True)
class PropagationMatrix:
    matrix: sp.csr_matrix
    kind: str

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"Unknown operator kind '{self.kind}', expected one of {OPERATOR_KINDS}")

    @property
    def num_nodes(self) -> int:
        return int(self.matrix.shape[0])

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _normalize_symmetric(adj: sp.csr_matrix) -> sp.csr_matrix:
    """D^-1/2 A D^-1/2 on CSR data; rows and columns with zero degree stay zero."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    adj.sum_duplicates()
    adj.sort_indices()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    rows = np.repeat(np.arange(adj.shape[0]), np.diff(adj.indptr))
    data = adj.data * inv_sqrt[rows] * inv_sqrt[adj.indices]
    out = sp.csr_matrix((data, adj.indices.copy(), adj.indptr.copy()), shape=adj.shape)
    out.eliminate_zeros()
    return out


def build_p_tilde(g: SimpleGraph) -> PropagationMatrix:
    adj = g.csr + sp.identity(g.num_nodes, format="csr")
    return PropagationMatrix(_normalize_symmetric(adj), "p_tilde")


def build_p_hat(mg: MultiGraph) -> PropagationMatrix:
    """
    A^_ij = z_ij (symmetric, diagonal z_ii counted once). Accepts integer
    sampled multiplicities or real posterior means. A node whose row of A^
    sums to zero gets an all-zero row and column.
    """
    counts = np.asarray(mg.counts, dtype=np.float64)
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise ValueError("Multiplicities must be finite and non-negative")
    i, j = mg.pairs[:, 0], mg.pairs[:, 1]
    off = i != j
    rows = np.concatenate([i, j[off]])
    cols = np.concatenate([j, i[off]])
    data = np.concatenate([counts, counts[off]])
    adj = sp.coo_matrix((data, (rows, cols)), shape=(mg.num_nodes, mg.num_nodes)).tocsr()
    isolated = int(np.sum(np.asarray(adj.sum(axis=1)).ravel() == 0))
    if isolated:
        logging.warning(f"P_hat: {isolated} node(s) with zero multiplicity degree receive no messages")
    return PropagationMatrix(_normalize_symmetric(adj), "p_hat")


def _check_rows(P: PropagationMatrix, H: np.ndarray) -> None:
    if H.shape[0] != P.num_nodes:
        raise ValueError(f"Feature matrix has {H.shape[0]} rows, operator has {P.num_nodes} nodes")


def propagate(P: PropagationMatrix, H, steps: int) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    _check_rows(P, H)
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    for _ in range(steps):
        H = P.matrix @ H
    return H


def appnp_propagate(P: PropagationMatrix, H0, teleport_alpha: float, L: int) -> np.ndarray:
    """L rounds of H <- (1 - alpha) P H + alpha H0."""
    H0 = np.asarray(H0, dtype=np.float64)
    _check_rows(P, H0)
    if not 0 < teleport_alpha < 1:
        raise ValueError(f"teleport_alpha must be in (0, 1), got {teleport_alpha}")
    H = H0
    for _ in range(L):
        H = (1.0 - teleport_alpha) * (P.matrix @ H) + teleport_alpha * H0
    return H


def spectral_radius(P: PropagationMatrix) -> float:
    n = P.num_nodes
    if n == 0:
        return 0.0
    if n < DENSE_FALLBACK_NODES:
        return float(np.max(np.abs(np.linalg.eigvalsh(P.toarray()))))
    value = eigsh(P.matrix, k=1, which="LM", return_eigenvectors=False)
    return float(np.abs(value[0]))


def save_operator(P: PropagationMatrix, path) -> None:
    """Triplet export `i j value`, one nonzero per line, preceded by a size header."""
    coo = P.matrix.tocoo()
    with open(path, mode="w", encoding="utf-8", newline="\n") as f:
        f.write(f"% {P.kind} {P.num_nodes} {P.num_nodes} {coo.nnz}\n")
        for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            f.write(f"{i} {j} {v!r}\n")
