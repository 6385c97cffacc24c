"""
Storage, validation and transformation of observed simple graphs and
virtual multigraphs.

Edge-list format:
    nodes <N>
    i j
    ...
Multigraph format:
    nodes <N>
    i j mult
    ...
Lines starting with '#' and blank lines are ignored.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

# --- CONFIGURATION ---
EDGES_FILE = "edges.txt"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"
SPLIT_FILE = "split.csv"
MAPPING_FILE = "node_mapping.csv"
SPLIT_VALUES = ("train", "test")


# --- ERRORS ---
class GraphFormatError(ValueError):
    """Malformed line(s) in a graph or dataset file."""


class GraphValidationError(ValueError):
    """Self-loops or duplicate unordered pairs in an observed graph."""


class NodeIndexError(IndexError):
    """Node id outside 0..num_nodes-1."""


# --- GRAPH TYPES ---
@dataclass(frozen=True)
class SimpleGraph:
    """
    Undirected, loop-free graph. `edges` is an (E, 2) int array of unordered
    pairs with i < j, sorted lexicographically. `csr` is the symmetric
    closure as a scipy CSR matrix with unit entries.
    """
    num_nodes: int
    edges: np.ndarray
    csr: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        csr = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.num_nodes, self.num_nodes)
        )
        csr.sort_indices()
        object.__setattr__(self, "csr", csr)

    @classmethod
    def from_pairs(cls, num_nodes: int, pairs) -> "SimpleGraph":
        """Validates pairs (any orientation) and builds the canonical graph."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        problems = _pair_problems(num_nodes, pairs, [str(i) for i in range(len(pairs))])
        if problems["index"]:
            raise NodeIndexError(f"Node ids out of range for {num_nodes} nodes at pairs: {problems['index']}")
        if problems["loop"] or problems["duplicate"]:
            raise GraphValidationError(
                f"Invalid pairs. Self-loops: {problems['loop']} Duplicates: {problems['duplicate']}"
            )
        canonical = np.sort(pairs, axis=1)
        order = np.lexsort((canonical[:, 1], canonical[:, 0]))
        return cls(num_nodes, canonical[order])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr)


@dataclass(frozen=True)
class MultiGraph:
    """
    Multiplicity map over unordered pairs (i <= j), diagonal included.
    `pairs` is (M, 2) with i <= j, `counts` holds the multiplicities.
    Integer counts come from sampled multigraphs; real counts from posterior
    means. Zero entries are dropped on construction.
    """
    num_nodes: int
    pairs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        pairs = np.sort(np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        counts = np.asarray(self.counts)
        if counts.shape[0] != pairs.shape[0]:
            raise ValueError("pairs and counts must have the same length")
        if np.any(counts < 0):
            raise ValueError("Multiplicities must be non-negative")
        if pairs.size and (pairs.min() < 0 or pairs.max() >= self.num_nodes):
            raise NodeIndexError(f"Multigraph pair outside 0..{self.num_nodes - 1}")
        keep = counts > 0
        pairs, counts = pairs[keep], counts[keep]
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs, counts = pairs[order], counts[order]
        if pairs.shape[0] > 1:
            same = np.all(pairs[1:] == pairs[:-1], axis=1)
            if np.any(same):
                raise GraphValidationError(f"Duplicate multigraph pairs: {pairs[1:][same].tolist()}")
        pairs.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_mapping(cls, num_nodes: int, mult: dict) -> "MultiGraph":
        if not mult:
            return cls(num_nodes, np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64))
        pairs = np.array(list(mult.keys()), dtype=np.int64)
        counts = np.array(list(mult.values()))
        return cls(num_nodes, pairs, counts)

    def as_dict(self) -> dict:
        return {(int(i), int(j)): c.item() for (i, j), c in zip(self.pairs, self.counts)}

    def diagonal(self) -> np.ndarray:
        """Self-loop multiplicity per node (zeros where absent)."""
        out = np.zeros(self.num_nodes, dtype=self.counts.dtype if self.counts.size else np.int64)
        loops = self.pairs[:, 0] == self.pairs[:, 1]
        out[self.pairs[loops, 0]] = self.counts[loops]
        return out


@dataclass(frozen=True)
class Dataset:
    name: str
    graph: SimpleGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray | None = None
    node_mapping: dict | None = None

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


# --- OPERATIONS ---
def collapse(mg: MultiGraph) -> SimpleGraph:
    """Off-diagonal entries become unit edges, diagonal entries are dropped."""
    off = mg.pairs[:, 0] != mg.pairs[:, 1]
    return SimpleGraph(mg.num_nodes, mg.pairs[off])


def degree(g: SimpleGraph, i: int) -> int:
    if not 0 <= i < g.num_nodes:
        raise NodeIndexError(f"Node {i} out of range for graph with {g.num_nodes} nodes")
    return int(g.csr.indptr[i + 1] - g.csr.indptr[i])


def graph_statistics(g: SimpleGraph) -> dict:
    degrees = g.degrees()
    return {
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "directed_edges": int(g.csr.nnz),
        "mean_degree": 2 * g.num_edges / g.num_nodes if g.num_nodes else 0.0,
        "max_degree": int(degrees.max()) if degrees.size else 0,
        "isolated": int(np.sum(degrees == 0)),
    }


# --- PARSING HELPERS ---
def _pair_problems(num_nodes, pairs, line_labels):
    """Collects offending line labels for index, loop and duplicate problems."""
    problems = {"index": [], "loop": [], "duplicate": []}
    seen = {}
    for (i, j), label in zip(pairs.tolist(), line_labels):
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            problems["index"].append(label)
            continue
        if i == j:
            problems["loop"].append(label)
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            problems["duplicate"].append(f"{label} (first at {seen[key]})")
        else:
            seen[key] = label
    return problems


def _is_int(token: str) -> bool:
    return token.lstrip("-").isdigit()


def _read_header(lines, file_path):
    """Returns (declared node count, remaining (line_no, tokens) rows)."""
    rows = []
    declared = None
    for line_no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        tokens = text.split()
        if declared is None:
            if len(tokens) != 2 or tokens[0] != "nodes" or not tokens[1].isdigit():
                raise GraphFormatError(f"{file_path}: line {line_no} must be 'nodes <N>', got {text!r}")
            declared = int(tokens[1])
            continue
        rows.append((line_no, tokens))
    if declared is None:
        raise GraphFormatError(f"{file_path}: missing 'nodes <N>' header")
    return declared, rows


def load_edge_list(path) -> tuple[SimpleGraph, dict | None]:
    """
    Reads the edge-list format. Ids are used as node indices when they are
    integers in 0..N-1. Otherwise they are remapped and the mapping (original
    id as text -> node index) is returned: sparse non-negative integer ids in
    ascending order, any other ids in order of first appearance. Without a
    remap the mapping is None.
    """
    path = Path(path)
    with open(path, mode="r", encoding="utf-8") as f:
        declared, rows = _read_header(f, path)

    malformed = [str(line_no) for line_no, tokens in rows if len(tokens) != 2]
    if malformed:
        raise GraphFormatError(f"{path}: expected 'i j' on lines {', '.join(malformed)}")

    mapping = None
    if all(_is_int(t) for _, tokens in rows for t in tokens):
        pairs = np.array([[int(a), int(b)] for _, (a, b) in rows], dtype=np.int64).reshape(-1, 2)
        distinct = np.unique(pairs)
        sparse = bool(distinct.size) and distinct[0] >= 0 and distinct[-1] >= declared
        if sparse and distinct.size <= declared:
            mapping = {str(v): idx for idx, v in enumerate(distinct.tolist())}
            pairs = np.searchsorted(distinct, pairs)
            logging.info(f"Remapped {distinct.size} sparse integer node ids in {path.name}.")
    else:
        mapping = {}
        for _, tokens in rows:
            for t in tokens:
                mapping.setdefault(t, len(mapping))
        if len(mapping) > declared:
            raise NodeIndexError(f"{path}: {len(mapping)} distinct node ids but header declares {declared}")
        pairs = np.array([[mapping[a], mapping[b]] for _, (a, b) in rows], dtype=np.int64).reshape(-1, 2)
        logging.info(f"Remapped {len(mapping)} non-integer node ids in {path.name}.")

    labels = [f"line {line_no}" for line_no, _ in rows]
    problems = _pair_problems(declared, pairs, labels)
    if problems["index"]:
        raise NodeIndexError(f"{path}: node id outside 0..{declared - 1} on {', '.join(problems['index'])}")
    if problems["loop"] or problems["duplicate"]:
        parts = []
        if problems["loop"]:
            parts.append(f"self-loops on {', '.join(problems['loop'])}")
        if problems["duplicate"]:
            parts.append(f"duplicate unordered pairs on {', '.join(problems['duplicate'])}")
        raise GraphValidationError(f"{path}: " + "; ".join(parts))

    graph = SimpleGraph.from_pairs(declared, pairs)
    stats = graph_statistics(graph)
    logging.info(
        f"Loaded {path.name}: {stats['nodes']} nodes, {stats['edges']} edges "
        f"({stats['directed_edges']} directed CSR entries), mean degree {stats['mean_degree']:.2f}"
    )
    return graph, mapping


def load_simple_graph(path) -> SimpleGraph:
    graph, _ = load_edge_list(path)
    return graph


def save_simple_graph(g: SimpleGraph, path) -> None:
    with open(path, mode="w", encoding="utf-8", newline="\n") as f:
        f.write(f"nodes {g.num_nodes}\n")
        for i, j in g.edges.tolist():
            f.write(f"{i} {j}\n")


def save_node_mapping(mapping: dict, path) -> None:
    df = pd.DataFrame({"original": list(mapping.keys()), "node": list(mapping.values())})
    df.to_csv(path, index=False)


def _format_count(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def save_multigraph(mg: MultiGraph, path) -> None:
    with open(path, mode="w", encoding="utf-8", newline="\n") as f:
        f.write(f"nodes {mg.num_nodes}\n")
        for (i, j), c in zip(mg.pairs.tolist(), mg.counts):
            f.write(f"{i} {j} {_format_count(c)}\n")


def load_multigraph(path) -> MultiGraph:
    path = Path(path)
    with open(path, mode="r", encoding="utf-8") as f:
        declared, rows = _read_header(f, path)
    malformed = [str(n) for n, tokens in rows if len(tokens) != 3]
    if malformed:
        raise GraphFormatError(f"{path}: expected 'i j mult' on lines {', '.join(malformed)}")
    try:
        pairs = np.array([[int(t[0]), int(t[1])] for _, t in rows], dtype=np.int64).reshape(-1, 2)
        raw = [t[2] for _, t in rows]
        if all(r.isdigit() for r in raw):
            counts = np.array([int(r) for r in raw], dtype=np.int64)
        else:
            counts = np.array([float(r) for r in raw], dtype=np.float64)
    except ValueError as e:
        raise GraphFormatError(f"{path}: non-numeric multigraph entry ({e})") from e
    return MultiGraph(declared, pairs, counts)


# --- NODE ATTRIBUTES ---
def _map_node_ids(df: pd.DataFrame, mapping: dict, num_nodes: int, path) -> pd.Series:
    """
    Translates original ids through the edge-list mapping. Ids missing from the
    edge list (isolated nodes) take the next free indices while any remain, so
    the first attribute file read completes the mapping.
    """
    keys = df["node"].astype(str).str.strip()
    for key in keys:
        if key not in mapping and len(mapping) < num_nodes:
            mapping[key] = len(mapping)
    unknown = df.index[~keys.isin(list(mapping))].tolist()
    if unknown:
        raise NodeIndexError(f"{path}: node ids not in the graph on data rows {[u + 2 for u in unknown]}")
    return keys.map(mapping).astype(np.int64)


def _read_node_csv(path, num_nodes, columns=None, mapping=None) -> pd.DataFrame:
    df = pd.read_csv(path)
    df.columns = [c.strip() for c in df.columns]
    if "node" not in df.columns:
        raise GraphFormatError(f"{path}: missing 'node' column")
    if columns:
        missing = [c for c in columns if c not in df.columns]
        if missing:
            raise GraphFormatError(f"{path}: missing column(s) {missing}")
    if mapping is not None:
        df["node"] = _map_node_ids(df, mapping, num_nodes, path)
    elif not pd.api.types.is_integer_dtype(df["node"]):
        bad = df.index[~df["node"].astype(str).str.strip().str.fullmatch(r"-?\d+")].tolist()
        raise NodeIndexError(f"{path}: non-integer node ids on data rows {[b + 2 for b in bad]}")
    bad = df.index[(df["node"] < 0) | (df["node"] >= num_nodes)].tolist()
    if bad:
        raise NodeIndexError(f"{path}: node ids out of range on data rows {[b + 2 for b in bad]}")
    duplicated = df.index[df["node"].duplicated()].tolist()
    if duplicated:
        raise GraphValidationError(f"{path}: duplicate node rows {[d + 2 for d in duplicated]}")
    if len(df) != num_nodes:
        raise GraphValidationError(f"{path}: {len(df)} rows but graph has {num_nodes} nodes")
    return df.sort_values("node").reset_index(drop=True)


def load_features(path, num_nodes: int, mapping: dict | None = None) -> np.ndarray:
    """Node-major feature matrix (rows = nodes). `mapping` translates remapped ids."""
    df = _read_node_csv(path, num_nodes, mapping=mapping)
    feature_cols = [c for c in df.columns if c != "node"]
    return df[feature_cols].to_numpy(dtype=np.float64)


def load_labels(path, num_nodes: int, mapping: dict | None = None) -> np.ndarray:
    df = _read_node_csv(path, num_nodes, columns=["class"], mapping=mapping)
    labels = df["class"].to_numpy(dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise GraphValidationError(f"{path}: negative class ids")
    return labels


def load_split(path, num_nodes: int, mapping: dict | None = None) -> np.ndarray:
    """Boolean train mask (True = train, False = test)."""
    df = _read_node_csv(path, num_nodes, columns=["split"], mapping=mapping)
    values = df["split"].astype(str).str.strip().str.lower()
    bad = df.index[~values.isin(SPLIT_VALUES)].tolist()
    if bad:
        raise GraphFormatError(f"{path}: split must be one of {SPLIT_VALUES}, bad rows {[b + 2 for b in bad]}")
    return (values == "train").to_numpy()


def load_dataset(dataset_dir) -> Dataset:
    dataset_dir = Path(dataset_dir)
    graph, mapping = load_edge_list(dataset_dir / EDGES_FILE)
    features = load_features(dataset_dir / FEATURES_FILE, graph.num_nodes, mapping)
    labels = load_labels(dataset_dir / LABELS_FILE, graph.num_nodes, mapping)
    train_mask = None
    if os.path.exists(dataset_dir / SPLIT_FILE):
        train_mask = load_split(dataset_dir / SPLIT_FILE, graph.num_nodes, mapping)
    logging.info(
        f"Dataset {dataset_dir.name}: {features.shape[1]} features, "
        f"{int(labels.max()) + 1 if labels.size else 0} classes, "
        f"split file {'found' if train_mask is not None else 'not found'}"
    )
    return Dataset(dataset_dir.name, graph, features, labels, train_mask, mapping)
