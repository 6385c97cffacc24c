import numpy as np
import pytest
from scipy import stats

from dmpgm_generate import (
    DENSE_NODE_LIMIT,
    DegenerateFitError,
    GenParams,
    edge_rate,
    generate_multigraph,
    generate_multigraph_dense,
    generate_simple,
    multigraph_from_copies,
    sample_edge_copies,
    sparsity_bench,
)


def test_gen_params_validation_names_field():
    with pytest.raises(ValueError, match="kappa_mass"):
        GenParams(kappa_mass=-1.0)
    with pytest.raises(ValueError, match="k_gen"):
        GenParams(k_gen=0)


def test_edge_rate_ignores_base_row():
    pi = np.array([0.2, 0.5, 0.3])
    weights = np.array([[9.0, 9.0, 9.0], [1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
    assert edge_rate(pi, weights) == pytest.approx(0.5 * 4 + 0.3 * 16)


def test_copies_in_slack_slot_are_discarded(rng):
    pi = np.array([0.0, 1.0])
    weights = np.array([[1.0, 1.0, 1.0], [2.0, 0.0, 0.0]])
    copies = sample_edge_copies(pi, weights, rng)
    assert copies.num_drawn > 0
    assert copies.discarded == copies.num_drawn
    assert copies.source.size == 0


def test_number_of_copies_is_poisson_rate(rng):
    pi = np.array([0.0, 1.0])
    weights = np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    counts = np.array([sample_edge_copies(pi, weights, rng).num_drawn for _ in range(3000)])
    se = np.sqrt(4.0 / counts.size)
    assert abs(counts.mean() - 4.0) < 4 * se


def test_copies_carry_cluster_labels(rng):
    pi = np.array([0.0, 0.5, 0.5])
    weights = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 3.0, 0.0, 0.0], [0.0, 0.0, 3.0, 3.0]])
    copies = sample_edge_copies(pi, weights, rng)
    ones = copies.cluster == 1
    assert np.all(copies.source[ones] == 0) and np.all(copies.target[ones] == 0)
    assert np.all(copies.source[~ones] >= 1)


def test_multigraph_from_copies_folds_orientation():
    mg = multigraph_from_copies(3, [0, 1, 1], [1, 0, 1])
    assert mg.as_dict() == {(0, 1): 2, (1, 1): 1}


def test_generation_is_seed_deterministic():
    p = GenParams(num_nodes=60, kappa_mass=10.0, seed=3)
    a = generate_multigraph(p, np.random.default_rng(p.seed)).multigraph
    b = generate_multigraph(p, np.random.default_rng(p.seed)).multigraph
    assert np.array_equal(a.pairs, b.pairs)
    assert np.array_equal(a.counts, b.counts)


def test_generate_simple_is_loop_free():
    g = generate_simple(GenParams(num_nodes=80, kappa_mass=20.0), np.random.default_rng(1))
    assert np.all(g.edges[:, 0] < g.edges[:, 1])


def test_dense_scan_total_matches_rate(rng):
    pi = np.array([0.0, 0.5, 0.5])
    weights = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 0.5, 0.5], [0.0, 0.2, 0.2, 1.0]])
    lam = edge_rate(pi, weights)
    totals = np.array([generate_multigraph_dense(pi, weights, rng).counts.sum() for _ in range(4000)])
    se = np.sqrt(lam / totals.size)
    assert abs(totals.mean() - lam) < 4 * se


def test_dense_scan_node_limit(rng):
    weights = np.ones((2, DENSE_NODE_LIMIT + 2))
    with pytest.raises(ValueError, match="limited"):
        generate_multigraph_dense(np.array([0.5, 0.5]), weights, rng)


def test_sparsity_bench_argument_checks():
    p = GenParams()
    with pytest.raises(ValueError, match="3 grid points"):
        sparsity_bench(p, [1.0, 2.0], reps=5, show_progress=False)
    with pytest.raises(ValueError, match="5 replicates"):
        sparsity_bench(p, [1.0, 2.0, 3.0], reps=4, show_progress=False)
    with pytest.raises(DegenerateFitError, match="Constant"):
        sparsity_bench(p, [5.0, 5.0, 5.0], reps=5, show_progress=False)


@pytest.mark.slow
def test_sparsity_bench_fits_a_finite_slope():
    fit = sparsity_bench(GenParams(num_nodes=300, k_gen=10, seed=2), [20.0, 40.0, 80.0], reps=5,
                         show_progress=False)
    assert np.isfinite(fit.slope)
    assert len(fit.points) == 3
    assert fit.growth_knob == "kappa_mass"


def folded_pair_rates(pi, weights):
    w = weights[1:, 1:]
    rates = np.einsum("k,ki,kj->ij", pi[1:], w, w)
    return 2.0 * rates - np.diag(np.diag(rates))


def test_copy_counts_per_pair_follow_folded_poisson_rates(rng):
    pi = np.array([0.1, 0.5, 0.4])
    weights = np.array([[1.0, 1.0, 1.0, 1.0], [0.5, 1.0, 0.5, 0.3], [0.2, 0.3, 0.9, 0.8]])
    rates = folded_pair_rates(pi, weights)
    n = 4000
    counts = np.zeros((n, 3, 3), dtype=np.int64)
    for t in range(n):
        copies = sample_edge_copies(pi, weights, rng)
        for (i, j), c in multigraph_from_copies(3, copies.source, copies.target).as_dict().items():
            counts[t, i, j] = c

    upper_i, upper_j = np.triu_indices(3)
    observed = counts[:, upper_i, upper_j].sum(axis=0)
    expected = n * rates[upper_i, upper_j]
    chi2 = np.sum((observed - expected) ** 2 / expected)
    assert stats.chi2.sf(chi2, df=observed.size) > 1e-3

    # full distribution of one pair: bins 0, 1, 2, 3+
    lam = rates[0, 1]
    pmf = stats.poisson.pmf([0, 1, 2], lam)
    probs = np.append(pmf, 1.0 - pmf.sum())
    hist = np.bincount(np.minimum(counts[:, 0, 1], 3), minlength=4)
    assert stats.chisquare(hist, n * probs).pvalue > 1e-3


def test_expected_total_multiplicity_grows_with_kappa():
    means = []
    for kappa in (2.0, 8.0, 32.0):
        p = GenParams(kappa_mass=kappa, k_gen=5, num_nodes=50)
        rng = np.random.default_rng(7)
        totals = [generate_multigraph(p, rng).multigraph.counts.sum() for _ in range(200)]
        means.append(np.mean(totals))
    assert means[0] < means[1] < means[2]


@pytest.mark.slow
def test_generated_graphs_are_sparse():
    fit = sparsity_bench(GenParams(num_nodes=5000, k_gen=20, seed=4), [10.0, 20.0, 40.0, 80.0], reps=5,
                         show_progress=False)
    assert fit.slope < 2.0


@pytest.mark.slow
def test_degrees_are_heavy_tailed():
    p = GenParams(kappa_mass=40.0, k_gen=20, num_nodes=2000, seed=5)
    g = generate_simple(p, np.random.default_rng(p.seed))
    degrees = g.degrees()
    active = degrees[degrees > 0]
    assert active.max() > 5 * active.mean()
