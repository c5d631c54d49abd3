import numpy as np
import pytest

from copygraph.copying import build_knn_embedding, identity_distribution
from copygraph.rng import derive_rng
from copygraph.theory import (
    ERParams,
    SBMParams,
    cross_class_distribution,
    sample_er,
    sample_sbm,
    skewed_distribution,
    uniform_distribution,
    verify_er_marginal,
    verify_sbm_marginal,
    within_class_distribution,
)


def test_sbm_extremes():
    zero = SBMParams.planted([5, 5], 0.0, 0.0)
    one = SBMParams.planted([5, 5], 1.0, 1.0)
    assert sample_sbm(zero, derive_rng(0)).n_edges == 0
    assert sample_sbm(one, derive_rng(0)).n_edges == 45


def test_sbm_within_frequency():
    params = SBMParams.planted([20, 20], 0.5, 0.0)
    within = np.array([sample_sbm(params, derive_rng(1, "sbm", t)).n_edges for t in range(200)])
    pairs = 2 * 190
    freq = within.sum() / (200 * pairs)
    assert abs(freq - 0.5) < 3 * np.sqrt(0.25 / (200 * pairs))


def test_er_examples():
    assert sample_er(ERParams(10, 0.0), derive_rng(0)).n_edges == 0
    assert sample_er(ERParams(10, 1.0), derive_rng(0)).n_edges == 45
    m = sample_er(ERParams(100, 0.3), derive_rng(3)).n_edges
    assert abs(m - 0.3 * 4950) < 3 * np.sqrt(4950 * 0.21)


def test_params_validation():
    with pytest.raises(ValueError):
        SBMParams(np.array([0, 1]), np.array([[0.1, 0.2], [0.3, 0.1]]))
    with pytest.raises(ValueError):
        SBMParams(np.array([0, 0]), np.array([[0.1, 0.2], [0.2, 0.1]]))
    with pytest.raises(ValueError):
        ERParams(5, 1.5)


def test_within_class_mirrors_label_uniform():
    d = within_class_distribution(np.array([0, 0, 1]))
    assert d.row(0) == {0: 0.5, 1: 0.5} and d.row(2) == {2: 1.0}
    assert within_class_distribution(np.zeros(3, dtype=int)).row(1) == {0: 1 / 3, 1: 1 / 3, 2: 1 / 3}


def test_cross_class_needs_two_blocks():
    with pytest.raises(ValueError):
        cross_class_distribution(np.zeros(4, dtype=int))
    assert cross_class_distribution(np.array([0, 0, 1])).row(2) == {0: 0.5, 1: 0.5}


def test_sbm_harness_passes_and_control_fails():
    params = SBMParams.planted([60, 60], 0.2, 0.02)
    rep = verify_sbm_marginal(params, n_trials=120, seed=3)
    assert rep.passed, [c.z for c in rep.cells]
    assert all(abs(c.z) < 4 for c in rep.cells)
    assert rep.false_alarm_bound < 0.01
    ctrl = verify_sbm_marginal(params, n_trials=120, seed=3, dist=cross_class_distribution(params.assignment))
    assert not ctrl.passed
    within = [c for c in ctrl.cells if c.blocks[0] == c.blocks[1]]
    across = [c for c in ctrl.cells if c.blocks[0] != c.blocks[1]]
    # frequencies move toward each other
    assert all(c.frequency < c.beta for c in within) and all(c.frequency > c.beta for c in across)


def test_sbm_harness_more_blocks():
    params = SBMParams.planted([30, 30, 30, 30], 0.3, 0.05)
    assert verify_sbm_marginal(params, n_trials=60, seed=5).passed


def test_identity_distribution_matches_observed():
    params = SBMParams.planted([30, 30], 0.3, 0.05)
    rep = verify_sbm_marginal(params, n_trials=20, seed=1, dist=identity_distribution(60), conditioned=True)
    assert rep.observed_frequencies is not None
    assert [c.frequency for c in rep.cells] == pytest.approx(rep.observed_frequencies, abs=1e-15)


@pytest.mark.parametrize("kind", ["uniform", "skewed", "knn"])
def test_er_harness_any_distribution(kind):
    n = 120
    dist = {
        "uniform": lambda: uniform_distribution(n),
        "skewed": lambda: skewed_distribution(n, derive_rng(0, "skew"), support=10),
        "knn": lambda: build_knn_embedding(np.random.default_rng(0).normal(size=(n, 2)), 3),
    }[kind]()
    rep = verify_er_marginal(ERParams(n, 0.1), dist, n_trials=80, seed=7)
    assert rep.passed, rep.max_abs_z


def test_er_extremes():
    d = uniform_distribution(30)
    empty = verify_er_marginal(ERParams(30, 0.0), d, n_trials=5, seed=0)
    assert empty.passed and empty.cells[0].frequency == 0.0
    full = verify_er_marginal(ERParams(30, 1.0), identity_distribution(30), n_trials=5, seed=0)
    assert full.passed and full.cells[0].frequency == 1.0


def test_degenerate_counts_rejected():
    with pytest.raises(ValueError, match="expects only"):
        verify_er_marginal(ERParams(10, 0.01), uniform_distribution(10), n_trials=2, seed=0)


def test_er_size_mismatch():
    with pytest.raises(ValueError):
        verify_er_marginal(ERParams(10, 0.1), uniform_distribution(11), n_trials=2)


def test_workers_do_not_change_report():
    params = SBMParams.planted([20, 20], 0.3, 0.05)
    a = verify_sbm_marginal(params, n_trials=30, seed=2, workers=1).as_dict()
    b = verify_sbm_marginal(params, n_trials=30, seed=2, workers=8).as_dict()
    assert a == b
    assert "pass" in a
