import os
import sys

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from graph_core import SimpleGraph  # noqa: E402


def ring_pairs(nodes):
    nodes = list(nodes)
    return [(nodes[i], nodes[(i + 1) % len(nodes)]) for i in range(len(nodes))]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return SimpleGraph.from_pairs(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def two_rings():
    """Two disjoint 10-node rings, one per class."""
    return SimpleGraph.from_pairs(20, ring_pairs(range(10)) + ring_pairs(range(10, 20)))


def write_toy_dataset(directory, graph, with_split=False):
    """Two separable classes: class c nodes carry feature 5 in column c."""
    os.makedirs(directory, exist_ok=True)
    labels = np.array([0] * 10 + [1] * 10)
    with open(os.path.join(directory, "edges.txt"), "w", encoding="utf-8") as f:
        f.write(f"nodes {graph.num_nodes}\n")
        for i, j in graph.edges.tolist():
            f.write(f"{i} {j}\n")
    features = pd.DataFrame({"node": range(20), "f0": 5.0 * (labels == 0), "f1": 5.0 * (labels == 1)})
    features.to_csv(os.path.join(directory, "features.csv"), index=False)
    pd.DataFrame({"node": range(20), "class": labels}).to_csv(os.path.join(directory, "labels.csv"), index=False)
    if with_split:
        split = ["train" if i % 2 == 0 else "test" for i in range(20)]
        pd.DataFrame({"node": range(20), "split": split}).to_csv(os.path.join(directory, "split.csv"), index=False)
    return directory


@pytest.fixture
def toy_dataset_dir(tmp_path, two_rings):
    return write_toy_dataset(tmp_path / "toy", two_rings)
