"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``PASS``/``FAIL`` line (also repeated in the
terminal summary). Criteria that need the Cora citation graph fail with
the loader's error when the data are not available locally.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, random_graph, run_cli_chain, write_cli_inputs

from copygraph.copying import apply_copy
from copygraph.datasets import load_cora
from copygraph.experiments import (
    copying_fidelity,
    data_scarce_trials,
    defense_trials,
    gcn_replication,
    lcc_dataset,
    recsys_trials,
)
from copygraph.gcn import (
    EnsembleConfig,
    GcnConfig,
    LabelSplit,
    bgcn_copy_classify,
    gcn_forward,
    init_model,
    loss_and_grads,
    mc_dropout_predict,
    normalize_adjacency,
)
from copygraph.graph import Graph
from copygraph.recsys import (
    BprConfig,
    BprModel,
    bpr_gradient,
    bpr_objective,
    bpr_train,
    auc,
    ndcg_at_k,
    planted_interactions,
    score_matrix,
    split_interactions,
)
from copygraph.rng import derive_rng
from copygraph.stats import claw_fraction, degree_stats, cross_community_fraction, summarize
from copygraph.theory import ERParams, SBMParams, cross_class_distribution, skewed_distribution, verify_er_marginal, verify_sbm_marginal

pytestmark = pytest.mark.slow

WORKERS = os.cpu_count() or 1
FRESH_SEEDS = list(range(100, 120))
CORA_CROSS = 0.196


def record(capsys, criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    return ok


def cora_or_fail(capsys, criterion):
    try:
        return lcc_dataset(load_cora())
    except FileNotFoundError as exc:
        record(capsys, criterion, False, f"Cora unavailable ({exc})")
        raise


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300)


def central_diff(f, w, eps=1e-6):
    out = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + eps
        up = f()
        w[idx] = old - eps
        down = f()
        w[idx] = old
        out[idx] = (up - down) / (2 * eps)
    return out


def test_criterion_1_er_any_distribution(capsys):
    t0 = time.perf_counter()
    dist = skewed_distribution(300, derive_rng(1, "accept", "skewed"))
    rep = verify_er_marginal(ERParams(300, 0.1), dist, 200, seed=1, workers=WORKERS)
    cell = rep.cells[0]
    elapsed = time.perf_counter() - t0
    ok = abs(cell.frequency - cell.target) <= 4 * cell.std_error and elapsed < 60
    record(capsys, 1, ok, f"freq {cell.frequency:.5f} target {cell.target:.5f} z {cell.z:+.2f} in {elapsed:.1f}s")
    assert ok


def test_criterion_2_sbm_within_class(capsys):
    t0 = time.perf_counter()
    params = SBMParams.planted([100, 100], 0.2, 0.02)
    rep = verify_sbm_marginal(params, 300, seed=2, workers=WORKERS)
    control = verify_sbm_marginal(params, 300, seed=2, dist=cross_class_distribution(params.assignment), workers=WORKERS)
    elapsed = time.perf_counter() - t0
    cells_ok = all(abs(c.z) < 4 for c in rep.cells)
    ok = cells_ok and not control.passed and elapsed < 180
    record(capsys, 2, ok, f"max|z| {max(abs(c.z) for c in rep.cells):.2f}, control max|z| {control.max_abs_z:.1f} "
           f"(rejected: {not control.passed}), bound {rep.false_alarm_bound:.1e}, {elapsed:.1f}s")
    assert ok


def brute_claw_fraction(g):
    a = g.adj.toarray()
    edges = [(i, j) for i in range(g.n_nodes) for j in range(i + 1, g.n_nodes) if a[i, j]]
    claws = 0
    for trio in itertools.combinations(edges, 3):
        shared = set(trio[0]) & set(trio[1]) & set(trio[2])
        claws += len(shared) == 1
    return claws / math.comb(len(edges), 3)


def test_criterion_3_cora_statistics(capsys):
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(5, 31))
        g = random_graph(n, float(rng.uniform(0.05, min(0.4, 24 / n))), rng)
        if g.n_edges >= 3:
            assert claw_fraction(g) == pytest.approx(brute_claw_fraction(g), rel=1e-12)
    data = cora_or_fail(capsys, 3)
    avg, mx = degree_stats(data.graph)
    cross = cross_community_fraction(data.graph, data.labels)
    s = summarize(data.graph, data.labels)
    ok = abs(avg - 3.89) <= 0.01 and mx == 168 and abs(cross - CORA_CROSS) <= 0.002
    record(capsys, 3, ok, f"avg {avg:.3f} max {mx} cross {cross:.4f} claw {s.claw_fraction:.3e} "
           f"entropy {s.edge_entropy_relative:.4f}")
    assert ok


def test_criterion_4_cora_copying_fidelity(capsys):
    data = cora_or_fail(capsys, 4)
    t0 = time.perf_counter()
    res = copying_fidelity(data, seed=4, k=5, n_samples=100, workers=WORKERS)
    elapsed = time.perf_counter() - t0
    c, b = res.copying.cross_community, res.baseline.cross_community
    ok = abs(c - CORA_CROSS) < abs(b - CORA_CROSS) and elapsed < 600
    record(capsys, 4, ok, f"copying {c:.4f} baseline {b:.4f} in {elapsed:.0f}s")
    assert ok


def test_criterion_5_cora_gcn(capsys):
    data = cora_or_fail(capsys, 5)
    t0 = time.perf_counter()
    acc = gcn_replication(data, list(range(10)), workers=WORKERS)
    elapsed = time.perf_counter() - t0
    mean = 100 * acc.mean()
    ok = 76.8 <= mean <= 82.8 and elapsed < 300
    record(capsys, 5, ok, f"mean accuracy {mean:.2f}% in {elapsed:.0f}s")
    assert ok


def test_criterion_6_bgcn_data_scarce(capsys):
    cmp = data_scarce_trials(FRESH_SEEDS, n_per_class=5, ensemble=EnsembleConfig(10, 10), workers=WORKERS)
    d = cmp.as_dict()
    record(capsys, 6, cmp.passed, f"BGCN-Copy {d['treatment_mean']:.4f} vs GCN {d['control_mean']:.4f}, "
           f"{d['wins']}W/{d['losses']}L/{d['ties']}T, p {d['p_value']:.4f}")
    assert cmp.passed


def test_criterion_7_defense(capsys):
    cmp = defense_trials(FRESH_SEEDS, beta=0.5, n_targets=40, workers=WORKERS)
    d = cmp.as_dict()
    record(capsys, 7, cmp.passed, f"defended {d['treatment_mean']:.4f} vs attacked {d['control_mean']:.4f}, "
           f"{d['wins']}W/{d['losses']}L/{d['ties']}T, p {d['p_value']:.4f}")
    assert cmp.passed


def test_criterion_8_recsys(capsys):
    from copygraph.graph import BipartiteGraph

    bg = BipartiteGraph.from_pairs(3, 4, [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 0)])
    rng = np.random.default_rng(8)
    m = BprModel(rng.normal(size=(3, 3)), rng.normal(size=(4, 3)), 0.5, 0.01)
    triples = np.array([[0, 0, 2], [0, 1, 3], [1, 2, 0], [2, 3, 1]])
    du, dv = bpr_gradient(m, bg, triples)
    grad_err = max(
        rel_err(du, central_diff(lambda: bpr_objective(m, bg, triples), m.user_emb)),
        rel_err(dv, central_diff(lambda: bpr_objective(m, bg, triples), m.item_emb)),
    )
    full = planted_interactions(200, 100, 2, 0.9, 0.01, derive_rng(8, "accept", "auc"))[0]
    train, _, test = split_interactions(full, derive_rng(8, "accept", "split"))
    model = bpr_train(train, BprConfig(), derive_rng(8, "accept", "train"))
    a = auc(score_matrix(model, train), train, test)
    nd = ndcg_at_k(np.array([4, 7, 8]), {7}, 3)
    rec = recsys_trials(FRESH_SEEDS[:10], with_sgbpr=False, workers=WORKERS)
    base, ebpr = rec["base"].mean(), rec["ebpr"].mean()
    ok = grad_err < 1e-4 and a > 0.9 and abs(nd - 0.6309) < 1e-4 and abs(nd - 1 / math.log2(3)) < 1e-6 and ebpr >= base
    record(capsys, 8, ok, f"grad err {grad_err:.1e}, AUC {a:.4f}, NDCG {nd:.6f}, Recall@20 EBPR {ebpr:.4f} vs base {base:.4f}")
    assert ok


def test_criterion_9_numerical_core(capsys):
    rng = np.random.default_rng(9)
    g = random_graph(12, 0.3, rng)
    x = rng.normal(size=(12, 6))
    w1, w2 = rng.normal(size=(6, 5)), rng.normal(size=(5, 3))
    op = normalize_adjacency(g)
    train, y = np.array([0, 3, 5, 8]), np.array([0, 1, 2, 1])
    _, d1, d2 = loss_and_grads(w1, w2, op, x, train, y, 5e-4)
    f = lambda: loss_and_grads(w1, w2, op, x, train, y, 5e-4)[0]  # noqa: E731
    grad_err = max(rel_err(d1, central_diff(f, w1)), rel_err(d2, central_diff(f, w2)))

    cfg = GcnConfig(hidden=5)
    model = init_model(6, 3, cfg, derive_rng(9, "init"))
    split = LabelSplit(np.array([0, 1, 2]), np.array([0, 1, 2]), np.arange(3, 12))
    tables = [
        gcn_forward(model, op, x),
        mc_dropout_predict(model, op, x, 5, derive_rng(9, "mc")),
        bgcn_copy_classify(g, x, split, EnsembleConfig(3, 2, GcnConfig(hidden=4, epochs=5)), 9, 3),
    ]
    row_err = max(float(np.abs(t.sum(axis=-1) - 1).max()) for t in tables)

    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 15))
        h = random_graph(n, float(rng.uniform(0, 0.6)), rng, directed=True) if n > 1 else Graph.empty(1, directed=True)
        zeta = rng.integers(0, n, size=n)
        out_deg = np.diff(h.adj.indptr)
        mismatches += apply_copy(h, zeta).n_edges != int(out_deg[zeta].sum())
    ok = grad_err < 1e-4 and row_err < 1e-6 and mismatches == 0
    record(capsys, 9, ok, f"GCN grad err {grad_err:.1e}, max row-sum err {row_err:.1e}, edge identity mismatches {mismatches}/1000")
    assert ok


def test_criterion_10_cli_determinism(capsys, tmp_path):
    inputs = write_cli_inputs(tmp_path)
    runs = {}
    for tag, workers in (("a", 1), ("b", 1), ("c", 8)):
        codes = run_cli_chain(inputs, tmp_path / tag, seed=10, workers=workers)
        assert all(c == 0 for c in codes.values()), codes
        runs[tag] = {name: (tmp_path / tag / name / "payload.json").read_bytes() for name in codes}
    differ = sorted(n for n in runs["a"] if not (runs["a"][n] == runs["b"][n] == runs["c"][n]))
    ok = not differ
    record(capsys, 10, ok, f"{len(runs['a'])} subcommands byte-identical at workers 1/1/8" if ok else f"differ: {differ}")
    assert ok
