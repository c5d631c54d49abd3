import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_graph, undirected_graphs
from copygraph.graph import Graph
from copygraph.rng import derive_rng
from copygraph.stats import (
    calibrate_and_correct,
    claw_fraction,
    cross_community_fraction,
    degree_stats,
    edge_distribution_entropy,
    fit_calibration,
    mean_statistics,
    sample_bernoulli_graph,
    summarize,
)


def brute_force_claws(g: Graph) -> int:
    """Count 3-edge subsets that form a K_{1,3} by direct enumeration."""
    edges = [(a, b) for a, b, _ in g.edges() if a != b]
    count = 0
    for trio in itertools.combinations(edges, 3):
        nodes = [v for e in trio for v in e]
        centers = [v for v in set(nodes) if nodes.count(v) == 3]
        if len(centers) == 1 and len(set(nodes)) == 4:
            count += 1
    return count


def test_degree_examples(triangle, star):
    assert degree_stats(triangle) == (2.0, 2)
    assert degree_stats(star) == (1.5, 3)
    with pytest.raises(ValueError):
        degree_stats(Graph.empty(0))


def test_cross_community_examples(triangle):
    assert cross_community_fraction(triangle, np.zeros(3, dtype=int)) == 0.0
    k23 = Graph.from_edges(5, [(a, b) for a in (0, 1) for b in (2, 3, 4)])
    assert cross_community_fraction(k23, np.array([0, 0, 1, 1, 1])) == 1.0
    with pytest.raises(ValueError):
        cross_community_fraction(triangle, np.array([0, -1, 0]))


def test_claw_examples(star):
    path = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert claw_fraction(path) == 0.0
    assert claw_fraction(star) == 1.0
    with pytest.raises(ValueError):
        claw_fraction(Graph.from_edges(3, [(0, 1), (1, 2)]))


@given(st.integers(4, 30), st.floats(0.05, 0.3), st.integers(0, 2**31))
def test_claw_formula_matches_enumeration(n, p, seed):
    g = random_graph(n, min(p, 12.0 / n), np.random.default_rng(seed))
    m = g.n_edges
    if m < 3 or m > 45:
        return
    assert claw_fraction(g) == brute_force_claws(g) / math.comb(m, 3)


def test_entropy_examples(star):
    cycle = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
    assert edge_distribution_entropy(cycle)[0] == pytest.approx(1.0)
    p = np.array([3, 1, 1, 1]) / 6
    assert edge_distribution_entropy(star)[0] == pytest.approx(-(p * np.log(p)).sum() / np.log(4))
    assert edge_distribution_entropy(star)[0] == pytest.approx(0.8962, abs=1e-4)
    assert edge_distribution_entropy(Graph.from_edges(2, [(0, 1)]))[0] == pytest.approx(1.0)
    q = np.array([3, 1, 1, 1]) / 3
    assert edge_distribution_entropy(star)[1] == pytest.approx(-(q * np.log(q)).sum() / np.log(4))
    with pytest.raises(ValueError):
        edge_distribution_entropy(Graph.empty(3))


def test_entropy_ignores_isolated_nodes():
    g = Graph.from_edges(4, [(0, 1)])
    assert edge_distribution_entropy(g)[0] == pytest.approx(np.log(2) / np.log(4))


def test_summarize_triangle(triangle):
    s = summarize(triangle, np.zeros(3, dtype=int))
    assert (s.avg_degree, s.max_degree, s.cross_community, s.claw_fraction) == (2.0, 2, 0.0, 0.0)
    assert s.edge_entropy_relative == pytest.approx(1.0)
    assert summarize(triangle).cross_community is None


def test_mean_of_identical(star):
    s = summarize(star, np.array([0, 1, 1, 0]))
    m = mean_statistics([s] * 100)
    assert m.as_dict() == pytest.approx(s.as_dict())


@given(undirected_graphs(min_nodes=4), st.integers(0, 1000))
def test_statistics_relabel_invariant(g, seed):
    if g.n_edges < 3:
        return
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=g.n_nodes)
    perm = rng.permutation(g.n_nodes)
    inv = np.argsort(perm)
    h = Graph(g.adj[perm][:, perm], directed=False)
    a, b = summarize(g, labels), summarize(h, labels[perm])
    for f in ("avg_degree", "max_degree", "cross_community", "claw_fraction", "edge_entropy_relative", "n_edges"):
        assert getattr(a, f) == pytest.approx(getattr(b, f))
    assert np.array_equal(labels[perm][inv], labels)
    # permuting label names leaves the cross fraction alone
    renamed = np.array([2, 0, 1])[labels]
    assert cross_community_fraction(g, renamed) == a.cross_community


def test_statistics_ignore_weights_and_direction():
    g = Graph.from_edges(3, [(0, 1, 2.0), (1, 2, 5.0)])
    d = Graph.from_edges(3, [(0, 1), (2, 1)], directed=True)
    assert summarize(g) == summarize(d)


# ---------------------------------------------------------------- calibration


def test_calibration_indicator_capped():
    g = random_graph(10, 0.3, np.random.default_rng(0))
    p = g.adj.toarray()
    cal = fit_calibration(p, g)
    assert 10.0 < cal.alpha <= 30.0
    assert not cal.converged
    fitted = cal(p)
    assert np.all(fitted[p == 1] >= 0.95)


def test_calibration_constant_intercept_only():
    g = random_graph(40, 0.15, np.random.default_rng(1))
    n = g.n_nodes
    density = g.n_edges / (n * (n - 1) / 2)
    cal = fit_calibration(np.full((n, n), 0.3), g)
    assert cal(np.array([0.3]))[0] == pytest.approx(density, abs=1e-5)


def test_calibration_recovers_logistic_truth():
    rng = np.random.default_rng(7)
    n = 120
    p_model = rng.random((n, n))
    p_model = np.triu(p_model, 1) + np.triu(p_model, 1).T
    truth = 1 / (1 + np.exp(-(4.0 * p_model - 5.0)))
    g = sample_bernoulli_graph(truth, rng)
    cal = fit_calibration(p_model, g)
    assert cal.converged
    assert cal.alpha == pytest.approx(4.0, abs=0.6)
    assert cal.beta == pytest.approx(-5.0, abs=0.5)


def test_correct_examples():
    p = np.full((5, 5), 0.1)
    np.fill_diagonal(p, 0)
    assert np.allclose(calibrate_and_correct(p, 1.0), p)
    out = calibrate_and_correct(np.full((5, 5), 0.7), 4.0)
    assert out[0, 1] == pytest.approx(4.0 / 10)
    with pytest.raises(ValueError):
        calibrate_and_correct(np.zeros((3, 3)), 2.0)


@given(st.integers(3, 15), st.floats(0.5, 5.0), st.integers(0, 1000))
def test_correct_expected_count_and_order(n, target, seed):
    rng = np.random.default_rng(seed)
    p = rng.random((n, n)) * 0.01
    p = np.triu(p, 1) + np.triu(p, 1).T
    target = min(target, 0.5 * np.triu(p, 1).sum() / p.max())
    out = calibrate_and_correct(p, target)
    assert np.triu(out, 1).sum() == pytest.approx(target)
    iu = np.triu_indices(n, 1)
    assert np.array_equal(np.argsort(p[iu], kind="stable"), np.argsort(out[iu], kind="stable"))


def test_bernoulli_examples():
    assert sample_bernoulli_graph(np.zeros((6, 6)), derive_rng(0)).n_edges == 0
    assert sample_bernoulli_graph(np.ones((6, 6)), derive_rng(0)).n_edges == 15
    m = sample_bernoulli_graph(np.full((100, 100), 0.3), derive_rng(1)).n_edges
    mean = 0.3 * 4950
    assert abs(m - mean) < 3 * np.sqrt(4950 * 0.3 * 0.7)
