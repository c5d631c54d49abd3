"""End-to-end experiment pipelines shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit
from scipy.stats import binomtest

from copygraph.adversarial import AttackSpec, DefenseConfig, defend_copying, dice_attack, spectral_embedding
from copygraph.copying import build_knn_embedding, sample_graph
from copygraph.datasets import NodeDataset, normalize_features, planted_partition, remove_node_edges
from copygraph.gcn import EnsembleConfig, GcnConfig, LabelSplit, accuracy, bgcn_copy_classify, gcn_classify
from copygraph.graph import largest_connected_component
from copygraph.recsys import (
    BprConfig,
    EnsembleSpec,
    bpr_train,
    ebpr_evaluate,
    evaluate_scores,
    planted_interactions,
    score_matrix,
    sgbpr_train_evaluate,
    split_interactions,
)
from copygraph.rng import derive_rng, ordered_map
from copygraph.stats import (
    GraphStatistics,
    calibrate_and_correct,
    fit_calibration,
    mean_statistics,
    sample_bernoulli_graph,
    summarize,
)


@dataclass
class PairedComparison:
    """Per-trial ``treatment`` vs ``control`` with a one-sided sign test."""

    treatment: np.ndarray
    control: np.ndarray
    alpha: float = 0.05
    wins: int = field(init=False)
    losses: int = field(init=False)
    p_value: float = field(init=False)

    def __post_init__(self) -> None:
        self.treatment = np.asarray(self.treatment, dtype=float)
        self.control = np.asarray(self.control, dtype=float)
        d = self.treatment - self.control
        self.wins = int(np.sum(d > 0))
        self.losses = int(np.sum(d < 0))
        n = self.wins + self.losses
        self.p_value = float(binomtest(self.wins, n, 0.5, alternative="greater").pvalue) if n else 1.0

    @property
    def passed(self) -> bool:
        return bool(self.treatment.mean() > self.control.mean() and self.p_value < self.alpha)

    def as_dict(self) -> dict:
        return {
            "treatment_mean": float(self.treatment.mean()),
            "control_mean": float(self.control.mean()),
            "wins": self.wins,
            "losses": self.losses,
            "ties": int(len(self.treatment) - self.wins - self.losses),
            "p_value": self.p_value,
            "pass": self.passed,
        }


def lcc_dataset(data: NodeDataset) -> NodeDataset:
    _, remap = largest_connected_component(data.graph)
    return data.restrict(np.flatnonzero(remap >= 0))


# ---------------------------------------------------------- sample fidelity


@dataclass
class FidelityResult:
    observed: GraphStatistics
    copying: GraphStatistics
    baseline: GraphStatistics
    calibration: dict

    def copying_closer(self) -> bool:
        target = self.observed.cross_community
        return abs(self.copying.cross_community - target) < abs(self.baseline.cross_community - target)


def copying_fidelity(
    data: NodeDataset,
    seed: int,
    k: int = 5,
    n_samples: int = 100,
    embed_dim: int = 16,
    feature_dim: int = 16,
    workers: int = 1,
) -> FidelityResult:
    """Mean statistics of knn-copying samples and of a calibrated Bernoulli baseline.

    Both use the same spectral embedding. The baseline scores pairs with
    ``sigmoid(e_i . e_j)``, calibrates by logistic regression against the
    observed graph and rescales to the observed edge count.
    """
    g = data.graph
    labels = data.labels.labels
    x = normalize_features(data.features)
    emb = spectral_embedding(g, embed_dim, x, feature_dim)
    dist = build_knn_embedding(emb, k)
    copies = ordered_map(lambda i: summarize(sample_graph(g, dist, derive_rng(seed, "fidelity", "copy", i)), labels), range(n_samples), workers)

    p_model = expit(emb @ emb.T)
    cal = fit_calibration(p_model, g)
    p_cc = calibrate_and_correct(cal(p_model), g.n_edges)
    base = ordered_map(
        lambda i: summarize(sample_bernoulli_graph(p_cc, derive_rng(seed, "fidelity", "baseline", i)), labels), range(n_samples), workers
    )
    return FidelityResult(
        summarize(g, labels),
        mean_statistics(copies),
        mean_statistics(base),
        {"alpha": cal.alpha, "beta": cal.beta, "converged": cal.converged},
    )


# ------------------------------------------------------- node classification


def gcn_replication(
    data: NodeDataset,
    seeds: list[int],
    n_per_class: int = 20,
    n_test: int = 1000,
    config: GcnConfig = GcnConfig(),
    workers: int = 1,
) -> np.ndarray:
    """Test accuracy of a GCN over random per-class splits, one per seed."""
    labels = data.labels.labels
    x = normalize_features(data.features)

    def one(seed: int) -> float:
        split = LabelSplit.per_class(labels, n_per_class, derive_rng(seed, "split"), n_test=n_test)
        table = gcn_classify(data.graph, x, split, config, seed, data.labels.n_classes)
        return accuracy(table, labels, split.test)

    return np.array(ordered_map(one, seeds, workers))


def scarce_sbm(seed: int) -> NodeDataset:
    """Two-block SBM with sparse bag-of-words features."""
    return planted_partition([150, 150], 0.03, 0.003, 1000, derive_rng(seed, "scarce", "data"), feature_signal=0.5)


def data_scarce_trials(
    seeds: list[int],
    make_data: Callable[[int], NodeDataset] = scarce_sbm,
    n_per_class: int = 5,
    n_test: int = 100,
    ensemble: EnsembleConfig = EnsembleConfig(10, 10),
    predict_on: str = "observed",
    workers: int = 1,
) -> PairedComparison:
    """BGCN-Copy vs GCN with test-node edges removed; paired by seed."""

    def one(seed: int) -> tuple[float, float]:
        data = make_data(seed)
        labels = data.labels.labels
        split = LabelSplit.per_class(labels, n_per_class, derive_rng(seed, "scarce", "split"), n_test=n_test)
        g = remove_node_edges(data.graph, split.test)
        x = normalize_features(data.features)
        k = data.labels.n_classes
        base = gcn_classify(g, x, split, ensemble.gcn, seed, k)
        bgcn = bgcn_copy_classify(g, x, split, ensemble, seed, k, predict_on=predict_on, base_table=base)  # type: ignore[arg-type]
        return accuracy(bgcn, labels, split.test), accuracy(base, labels, split.test)

    res = np.array(ordered_map(one, seeds, workers))
    return PairedComparison(res[:, 0], res[:, 1])


# ------------------------------------------------------------------ defense


def defense_sbm(seed: int) -> NodeDataset:
    return planted_partition([150, 150], 0.05, 0.005, 1000, derive_rng(seed, "defense", "data"), feature_signal=0.5)


def defense_trials(
    seeds: list[int],
    make_data: Callable[[int], NodeDataset] = defense_sbm,
    beta: float = 0.5,
    n_targets: int = 40,
    n_per_class: int = 20,
    config: DefenseConfig = DefenseConfig(n_graphs=10, p_nearest=20),
    workers: int = 1,
) -> PairedComparison:
    """Defended vs attacked-GCN accuracy at DICE targets; paired by seed."""

    def one(seed: int) -> tuple[float, float]:
        data = make_data(seed)
        labels = data.labels.labels
        split = LabelSplit.per_class(labels, n_per_class, derive_rng(seed, "defense", "split"))
        targets = np.sort(derive_rng(seed, "defense", "targets").choice(split.test, size=n_targets, replace=False))
        attacked = dice_attack(data.graph, labels, AttackSpec(targets, beta), derive_rng(seed, "defense", "dice")).graph
        x = normalize_features(data.features)
        res = defend_copying(attacked, x, split, targets, config, seed, n_classes=data.labels.n_classes)
        return accuracy(res.table, labels, targets), accuracy(res.attacked_table, labels, targets)

    res = np.array(ordered_map(one, seeds, workers))
    return PairedComparison(res[:, 0], res[:, 1])


# ---------------------------------------------------------------- recsys


def sparse_planted(seed: int):
    return planted_interactions(300, 200, 10, 0.1, 0.002, derive_rng(seed, "recsys", "data"))[0]


def recsys_trials(
    seeds: list[int],
    make_data=sparse_planted,
    config: BprConfig = BprConfig(),
    spec: EnsembleSpec = EnsembleSpec(),
    with_sgbpr: bool = True,
    workers: int = 1,
) -> dict[str, np.ndarray]:
    """Recall@20 of base BPR, EBPR and (optionally) SGBPR per seed."""

    def one(seed: int) -> list[float]:
        full = make_data(seed)
        train, _, test = split_interactions(full, derive_rng(seed, "recsys", "split"))
        model = bpr_train(train, config, derive_rng(seed, "recsys", "train"))
        base = evaluate_scores(score_matrix(model, train), train, test).summary()["recall@20"]
        eb = ebpr_evaluate(model, train, test, spec, seed)[0].summary()["recall@20"]
        out = [base, eb]
        if with_sgbpr:
            out.append(sgbpr_train_evaluate(train, test, spec, config, seed).report.summary()["recall@20"])
        return out

    res = np.array(ordered_map(one, seeds, workers))
    out = {"base": res[:, 0], "ebpr": res[:, 1]}
    if with_sgbpr:
        out["sgbpr"] = res[:, 2]
    return out
