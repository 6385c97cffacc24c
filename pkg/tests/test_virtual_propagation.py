import numpy as np
import pytest

from graph_core import MultiGraph, SimpleGraph
from conftest import ring_pairs
from virtual_propagation import (
    PropagationMatrix,
    appnp_propagate,
    build_p_hat,
    build_p_tilde,
    propagate,
    save_operator,
    spectral_radius,
)


def unit_multigraph(g: SimpleGraph) -> MultiGraph:
    nodes = np.arange(g.num_nodes)
    pairs = np.concatenate([g.edges, np.stack([nodes, nodes], axis=1)])
    return MultiGraph(g.num_nodes, pairs, np.ones(pairs.shape[0], dtype=np.int64))


def test_p_tilde_two_node_path():
    P = build_p_tilde(SimpleGraph.from_pairs(2, [(0, 1)]))
    assert np.allclose(P.toarray(), 0.5)
    assert P.kind == "p_tilde"


def test_p_tilde_isolated_node_keeps_itself():
    P = build_p_tilde(SimpleGraph.from_pairs(3, [(0, 1)])).toarray()
    assert P[2, 2] == 1.0
    assert P[2, :2].tolist() == [0.0, 0.0]


def test_p_tilde_on_ring_is_row_stochastic():
    P = build_p_tilde(SimpleGraph.from_pairs(8, ring_pairs(range(8))))
    assert np.allclose(P.toarray().sum(axis=1), 1.0)
    assert np.allclose(P.toarray(), P.toarray().T)


def test_unit_multiplicities_reproduce_baseline_exactly(two_rings):
    P_tilde = build_p_tilde(two_rings)
    P_hat = build_p_hat(unit_multigraph(two_rings))
    assert np.array_equal(P_tilde.matrix.indptr, P_hat.matrix.indptr)
    assert np.array_equal(P_tilde.matrix.indices, P_hat.matrix.indices)
    assert np.array_equal(P_tilde.matrix.data, P_hat.matrix.data)


def test_p_hat_two_node_example():
    mg = MultiGraph(2, [(0, 1), (0, 0)], [2, 1])
    expected = np.array([[1 / 3, 2 / np.sqrt(6)], [2 / np.sqrt(6), 0.0]])
    assert np.allclose(build_p_hat(mg).toarray(), expected)


def test_p_hat_self_loop_weight_is_counted_once():
    mg = MultiGraph(2, [(0, 1), (0, 0)], [1, 5])
    P = build_p_hat(mg).toarray()
    assert P[0, 0] == pytest.approx(5 / 6)
    assert P[0, 1] == pytest.approx(1 / np.sqrt(6))


def test_p_hat_zero_degree_rows_are_zero(caplog):
    mg = MultiGraph(3, [(0, 1)], [2])
    P = build_p_hat(mg).toarray()
    assert np.all(P[2] == 0) and np.all(P[:, 2] == 0)
    assert "zero multiplicity degree" in caplog.text


def test_p_hat_accepts_real_counts_and_is_scale_invariant():
    mg = MultiGraph(3, [(0, 1), (1, 2), (1, 1)], [1.5, 0.25, 2.0])
    scaled = MultiGraph(3, mg.pairs, 4.0 * mg.counts)
    assert np.allclose(build_p_hat(mg).toarray(), build_p_hat(scaled).toarray())


def test_p_hat_rejects_non_finite_counts():
    mg = MultiGraph(2, [(0, 1)], [np.inf])
    with pytest.raises(ValueError, match="finite"):
        build_p_hat(mg)


def test_spectral_radius_at_most_one(rng, two_rings):
    assert spectral_radius(build_p_tilde(two_rings)) <= 1 + 1e-9
    pairs = [(i, j) for i in range(80) for j in range(i + 1, 80) if rng.uniform() < 0.1]
    counts = rng.integers(1, 6, size=len(pairs))
    mg = MultiGraph(80, pairs, counts)
    assert spectral_radius(build_p_hat(mg)) <= 1 + 1e-9


def test_unknown_operator_kind():
    with pytest.raises(ValueError, match="Unknown operator kind"):
        PropagationMatrix(build_p_tilde(SimpleGraph(1, np.empty((0, 2)))).matrix, "laplacian")


def test_propagate_steps(two_rings):
    P = build_p_tilde(two_rings)
    H = np.arange(40.0).reshape(20, 2)
    assert np.array_equal(propagate(P, H, 0), H)
    assert np.allclose(propagate(P, H, 2), P.toarray() @ P.toarray() @ H)
    with pytest.raises(ValueError, match="rows"):
        propagate(P, H[:5], 1)


def test_appnp_limits(two_rings):
    P = build_p_tilde(two_rings)
    H0 = np.random.default_rng(0).normal(size=(20, 3))
    assert np.array_equal(appnp_propagate(P, H0, 0.1, 0), H0)
    assert np.allclose(appnp_propagate(P, H0, 1 - 1e-12, 10), H0)
    fixed_point = 0.1 * np.linalg.solve(np.eye(20) - 0.9 * P.toarray(), H0)
    assert np.allclose(appnp_propagate(P, H0, 0.1, 500), fixed_point, atol=1e-9)
    with pytest.raises(ValueError, match="teleport_alpha"):
        appnp_propagate(P, H0, 1.0, 3)


def test_save_operator_writes_triplets(tmp_path):
    P = build_p_tilde(SimpleGraph.from_pairs(2, [(0, 1)]))
    save_operator(P, tmp_path / "p.txt")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert lines[0] == "% p_tilde 2 2 4"
    assert len(lines) == 5
    assert all(float(line.split()[2]) == pytest.approx(0.5) for line in lines[1:])
