import numpy as np
import pandas as pd
import pytest

from graph_core import (
    GraphFormatError,
    GraphValidationError,
    MultiGraph,
    NodeIndexError,
    SimpleGraph,
    collapse,
    degree,
    graph_statistics,
    load_dataset,
    load_edge_list,
    load_multigraph,
    save_multigraph,
    save_node_mapping,
    save_simple_graph,
)
from conftest import write_toy_dataset


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_from_pairs_canonicalises_orientation_and_order():
    g = SimpleGraph.from_pairs(4, [(2, 0), (1, 0), (3, 2)])
    assert g.edges.tolist() == [[0, 1], [0, 2], [2, 3]]
    assert g.num_edges == 3
    assert (g.csr != g.csr.T).nnz == 0


def test_from_pairs_rejects_loops_and_duplicates():
    with pytest.raises(GraphValidationError, match="Self-loops"):
        SimpleGraph.from_pairs(3, [(0, 0)])
    with pytest.raises(GraphValidationError, match="Duplicates"):
        SimpleGraph.from_pairs(3, [(0, 1), (1, 0)])


def test_degree_and_out_of_range(triangle):
    assert degree(triangle, 1) == 2
    with pytest.raises(NodeIndexError):
        degree(triangle, 3)


def test_graph_statistics_counts_isolated_nodes():
    g = SimpleGraph.from_pairs(4, [(0, 1)])
    stats = graph_statistics(g)
    assert stats["edges"] == 1
    assert stats["directed_edges"] == 2
    assert stats["isolated"] == 2
    assert stats["mean_degree"] == pytest.approx(0.5)


def test_load_edge_list_lists_every_offending_line(tmp_path):
    path = write(tmp_path / "g.txt", "nodes 4\n0 1\n1 1\n2 3\n2 2\n")
    with pytest.raises(GraphValidationError) as excinfo:
        load_edge_list(path)
    assert "line 3" in str(excinfo.value)
    assert "line 5" in str(excinfo.value)


def test_load_edge_list_reports_duplicates(tmp_path):
    path = write(tmp_path / "g.txt", "nodes 3\n0 1\n1 2\n1 0\n")
    with pytest.raises(GraphValidationError, match="duplicate"):
        load_edge_list(path)


def test_load_edge_list_rejects_negative_and_large_ids(tmp_path):
    with pytest.raises(NodeIndexError):
        load_edge_list(write(tmp_path / "neg.txt", "nodes 3\n0 -1\n"))
    with pytest.raises(NodeIndexError):
        load_edge_list(write(tmp_path / "big.txt", "nodes 3\n0 3\n1 4\n"))


def test_load_edge_list_requires_header_and_pairs(tmp_path):
    with pytest.raises(GraphFormatError, match="nodes"):
        load_edge_list(write(tmp_path / "a.txt", "0 1\n"))
    with pytest.raises(GraphFormatError, match="lines 3"):
        load_edge_list(write(tmp_path / "b.txt", "nodes 3\n0 1\n0 1 2\n"))


def test_load_edge_list_remaps_string_ids(tmp_path):
    path = write(tmp_path / "g.txt", "# comment\nnodes 3\nalice bob\n\nbob carol\n")
    graph, mapping = load_edge_list(path)
    assert mapping == {"alice": 0, "bob": 1, "carol": 2}
    assert graph.edges.tolist() == [[0, 1], [1, 2]]
    save_node_mapping(mapping, tmp_path / "map.csv")
    assert (tmp_path / "map.csv").read_text().splitlines()[0] == "original,node"


def test_simple_graph_file_round_trip(tmp_path, triangle):
    save_simple_graph(triangle, tmp_path / "t.txt")
    loaded, mapping = load_edge_list(tmp_path / "t.txt")
    assert mapping is None
    assert np.array_equal(loaded.edges, triangle.edges)


def test_multigraph_drops_zeros_and_sorts():
    mg = MultiGraph(3, [(2, 1), (0, 0), (0, 1)], [4, 0, 2])
    assert mg.as_dict() == {(0, 1): 2, (1, 2): 4}
    assert mg.diagonal().tolist() == [0, 0, 0]


def test_multigraph_validation():
    with pytest.raises(ValueError, match="non-negative"):
        MultiGraph(2, [(0, 1)], [-1])
    with pytest.raises(NodeIndexError):
        MultiGraph(2, [(0, 2)], [1])
    with pytest.raises(GraphValidationError):
        MultiGraph(2, [(0, 1), (1, 0)], [1, 1])


def test_multigraph_file_keeps_integer_and_real_counts(tmp_path):
    ints = MultiGraph(3, [(0, 1), (1, 1)], np.array([3, 2]))
    save_multigraph(ints, tmp_path / "i.txt")
    loaded = load_multigraph(tmp_path / "i.txt")
    assert loaded.counts.dtype.kind == "i"
    assert loaded.as_dict() == {(0, 1): 3, (1, 1): 2}

    reals = MultiGraph(3, [(0, 2), (2, 2)], np.array([1.25, 0.1]))
    save_multigraph(reals, tmp_path / "r.txt")
    assert load_multigraph(tmp_path / "r.txt").as_dict() == {(0, 2): 1.25, (2, 2): 0.1}


def test_collapse_drops_diagonal_and_multiplicity():
    mg = MultiGraph(3, [(0, 1), (1, 1), (1, 2)], [5, 2, 1])
    g = collapse(mg)
    assert g.edges.tolist() == [[0, 1], [1, 2]]


def test_load_dataset_with_and_without_split(tmp_path, two_rings):
    ds = load_dataset(write_toy_dataset(tmp_path / "plain", two_rings))
    assert ds.features.shape == (20, 2)
    assert ds.num_classes == 2
    assert ds.train_mask is None

    ds = load_dataset(write_toy_dataset(tmp_path / "split", two_rings, with_split=True))
    assert ds.train_mask.sum() == 10
    assert ds.train_mask[0] and not ds.train_mask[1]


def test_load_dataset_rejects_short_feature_file(tmp_path, two_rings):
    directory = write_toy_dataset(tmp_path / "bad", two_rings)
    features = (directory / "features.csv").read_text().splitlines()
    (directory / "features.csv").write_text("\n".join(features[:-1]) + "\n")
    with pytest.raises(GraphValidationError, match="19 rows"):
        load_dataset(directory)


def test_load_edge_list_remaps_sparse_integer_ids(tmp_path):
    graph, mapping = load_edge_list(write(tmp_path / "g.txt", "nodes 3\n0 10\n10 200\n"))
    assert mapping == {"0": 0, "10": 1, "200": 2}
    assert graph.edges.tolist() == [[0, 1], [1, 2]]


def write_named_dataset(directory, edges, feature_ids, label_ids):
    directory.mkdir()
    write(directory / "edges.txt", edges)
    pd.DataFrame({"node": feature_ids, "f0": np.arange(len(feature_ids), dtype=float)}).to_csv(
        directory / "features.csv", index=False)
    pd.DataFrame({"node": label_ids, "class": [i % 2 for i in range(len(label_ids))]}).to_csv(
        directory / "labels.csv", index=False)
    return directory


def test_load_dataset_translates_string_ids(tmp_path):
    directory = write_named_dataset(
        tmp_path / "named", "nodes 4\nalice bob\nbob carol\n",
        ["dave", "carol", "bob", "alice"], ["alice", "bob", "carol", "dave"])
    ds = load_dataset(directory)
    assert ds.node_mapping == {"alice": 0, "bob": 1, "carol": 2, "dave": 3}
    assert ds.features[:, 0].tolist() == [3.0, 2.0, 1.0, 0.0]
    assert ds.labels.tolist() == [0, 1, 0, 1]
    assert ds.graph.edges.tolist() == [[0, 1], [1, 2]]


def test_load_dataset_translates_sparse_integer_ids(tmp_path):
    directory = write_named_dataset(tmp_path / "sparse", "nodes 3\n0 10\n10 200\n", [200, 10, 0], [0, 10, 200])
    ds = load_dataset(directory)
    assert ds.features[:, 0].tolist() == [2.0, 1.0, 0.0]
    assert ds.labels.tolist() == [0, 1, 0]


def test_load_dataset_rejects_ids_outside_the_graph(tmp_path):
    directory = write_named_dataset(
        tmp_path / "unknown", "nodes 3\nalice bob\nbob carol\n",
        ["alice", "bob", "carol"], ["alice", "bob", "eve"])
    with pytest.raises(NodeIndexError, match="not in the graph"):
        load_dataset(directory)


def test_load_dataset_rejects_string_ids_for_an_integer_graph(tmp_path):
    directory = write_named_dataset(tmp_path / "mixed", "nodes 2\n0 1\n", ["a", "b"], [0, 1])
    with pytest.raises(NodeIndexError, match="non-integer"):
        load_dataset(directory)
