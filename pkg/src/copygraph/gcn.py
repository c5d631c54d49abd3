"""Two-layer graph convolutional classifier with MC dropout, in plain numpy.

The forward pass is ``softmax(op @ relu(op @ dropout(X) @ W1) @ W2)`` with
``op = D^-1/2 (A + I) D^-1/2``. Gradients are written out by hand and
checked against finite differences in the test suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.special import log_softmax, softmax

from copygraph.copying import CopyingDistribution, build_label_uniform, sample_graph
from copygraph.graph import Graph
from copygraph.rng import derive_rng, ordered_map

logger = logging.getLogger(__name__)

Matrix = np.ndarray | sp.spmatrix


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GcnConfig:
    hidden: int = 16
    dropout: float = 0.5
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 5e-4

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")


@dataclass
class GcnModel:
    w1: np.ndarray
    w2: np.ndarray
    dropout_rate: float = 0.5
    weight_decay: float = 5e-4
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("W1 and W2 shapes do not chain")
        if not (np.all(np.isfinite(self.w1)) and np.all(np.isfinite(self.w2))):
            raise ValueError("weights must be finite")

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]


@dataclass(frozen=True)
class LabelSplit:
    train: np.ndarray
    y_train: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        tr = np.asarray(self.train, dtype=np.int64)
        te = np.asarray(self.test, dtype=np.int64)
        y = np.asarray(self.y_train, dtype=np.int64)
        object.__setattr__(self, "train", tr)
        object.__setattr__(self, "test", te)
        object.__setattr__(self, "y_train", y)
        if tr.size == 0:
            raise ValueError("training set is empty")
        if y.shape != tr.shape or np.any(y < 0):
            raise ValueError("every training node needs a label")
        if np.intersect1d(tr, te).size:
            raise ValueError("train and test sets overlap")

    @classmethod
    def per_class(cls, labels: np.ndarray, n_per_class: int, rng: np.random.Generator, n_test: int | None = None) -> "LabelSplit":
        """``n_per_class`` random training nodes per class; the rest (or a sample of it) is test."""
        labels = np.asarray(labels)
        train = []
        for k in np.unique(labels[labels >= 0]):
            members = np.flatnonzero(labels == k)
            train.append(rng.choice(members, size=min(n_per_class, len(members)), replace=False))
        tr = np.sort(np.concatenate(train))
        rest = np.setdiff1d(np.flatnonzero(labels >= 0), tr)
        te = rest if n_test is None else np.sort(rng.choice(rest, size=min(n_test, len(rest)), replace=False))
        return cls(tr, labels[tr], te)


@dataclass(frozen=True)
class EnsembleConfig:
    n_graphs: int = 10
    n_weight_samples: int = 10
    gcn: GcnConfig = GcnConfig()

    def __post_init__(self) -> None:
        if self.n_graphs < 1 or self.n_weight_samples < 1:
            raise ValueError("N_G and S must be >= 1")


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    if g.directed:
        raise ValueError("normalize_adjacency expects an undirected graph")
    a = g.adj + sp.identity(g.n_nodes, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv = sp.diags(1.0 / np.sqrt(d))
    return sp.csr_matrix(inv @ a @ inv)


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def init_model(n_features: int, n_classes: int, config: GcnConfig, rng: np.random.Generator) -> GcnModel:
    return GcnModel(
        glorot(n_features, config.hidden, rng),
        glorot(config.hidden, n_classes, rng),
        config.dropout,
        config.weight_decay,
    )


def _dropout(x: Matrix, rate: float, rng: np.random.Generator) -> Matrix:
    if rate == 0:
        return x
    scale = 1.0 / (1.0 - rate)
    if sp.issparse(x):
        x = sp.csr_matrix(x, copy=True)
        x.data = x.data * (rng.random(x.nnz) >= rate) * scale
        return x
    return x * (rng.random(x.shape) >= rate) * scale


def _check_shapes(model: GcnModel, op: sp.spmatrix, x: Matrix) -> None:
    n = op.shape[0]
    if op.shape != (n, n) or x.shape[0] != n:
        raise ValueError(f"operator {op.shape} and features {x.shape} disagree on node count")
    if x.shape[1] != model.w1.shape[0]:
        raise ValueError(f"features have {x.shape[1]} columns, W1 expects {model.w1.shape[0]}")


def _logits(w1, w2, op, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z1 = op @ np.asarray(x @ w1)
    h1 = np.maximum(z1, 0.0)
    z2 = op @ (h1 @ w2)
    return z1, h1, z2


def gcn_forward(
    model: GcnModel,
    op: sp.spmatrix,
    x: Matrix,
    dropout_on: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class-probability table; dropout on the input features when ``dropout_on``."""
    _check_shapes(model, op, x)
    if dropout_on:
        if rng is None:
            raise ValueError("dropout needs a generator")
        x = _dropout(x, model.dropout_rate, rng)
    return softmax(_logits(model.w1, model.w2, op, x)[2], axis=1)


def loss_and_grads(
    w1: np.ndarray,
    w2: np.ndarray,
    op: sp.spmatrix,
    x: Matrix,
    train: np.ndarray,
    y_train: np.ndarray,
    weight_decay: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy on ``train`` plus ``weight_decay/2 ||W1||^2``."""
    z1, h1, z2 = _logits(w1, w2, op, x)
    logp = log_softmax(z2[train], axis=1)
    loss = -float(np.mean(logp[np.arange(len(train)), y_train])) + 0.5 * weight_decay * float(np.sum(w1 * w1))
    dz2 = np.zeros_like(z2)
    g = np.exp(logp)
    g[np.arange(len(train)), y_train] -= 1.0
    dz2[train] = g / len(train)
    s2 = op.T @ dz2
    dw2 = h1.T @ s2
    dz1 = (s2 @ w2.T) * (z1 > 0)
    dw1 = np.asarray(x.T @ (op.T @ dz1)) + weight_decay * w1
    return loss, dw1, dw2


class _Adam:
    def __init__(self, shapes, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            out.append(p - self.lr * mh / (np.sqrt(vh) + self.eps))
        return out


def gcn_train(
    g: Graph,
    x: Matrix,
    split: LabelSplit,
    config: GcnConfig,
    rng: np.random.Generator,
    n_classes: int | None = None,
) -> GcnModel:
    """Full-batch Adam on the training nodes for a fixed number of epochs."""
    op = normalize_adjacency(g)
    k = n_classes if n_classes is not None else int(split.y_train.max()) + 1
    model = init_model(x.shape[1], k, config, rng)
    _check_shapes(model, op, x)
    w1, w2 = model.w1, model.w2
    opt = _Adam([w1.shape, w2.shape], config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        xd = _dropout(x, config.dropout, rng)
        loss, d1, d2 = loss_and_grads(w1, w2, op, xd, split.train, split.y_train, config.weight_decay)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
        history.append(loss)
        w1, w2 = opt.step([w1, w2], [d1, d2])
    return replace(model, w1=w1, w2=w2, loss_history=history)


def mc_dropout_predict(model: GcnModel, op: sp.spmatrix, x: Matrix, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """``n_samples x N x K`` stack of stochastic forward passes."""
    if n_samples < 1:
        raise ValueError("need at least one MC dropout sample")
    return np.stack([gcn_forward(model, op, x, dropout_on=True, rng=rng) for _ in range(n_samples)])


def accuracy(table: np.ndarray, labels: np.ndarray, nodes: np.ndarray) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("accuracy over an empty node set")
    return float(np.mean(np.argmax(table[nodes], axis=1) == np.asarray(labels)[nodes]))


def gcn_classify(g: Graph, x: Matrix, split: LabelSplit, config: GcnConfig, seed: int, n_classes: int | None = None) -> np.ndarray:
    """Train one GCN and return its deterministic prediction table."""
    model = gcn_train(g, x, split, config, derive_rng(seed, "gcn", "train"), n_classes)
    return gcn_forward(model, normalize_adjacency(g), x)


def bgcn_copy_classify(
    g_obs: Graph,
    x: Matrix,
    split: LabelSplit,
    config: EnsembleConfig,
    seed: int,
    n_classes: int | None = None,
    predict_on: Literal["observed", "sampled"] = "observed",
    workers: int = 1,
    base_table: np.ndarray | None = None,
    dist: CopyingDistribution | None = None,
) -> np.ndarray:
    """Bayesian GCN averaging over node-copying graph samples.

    A base GCN on ``g_obs`` supplies predicted labels; training nodes keep
    their given labels. Each of the ``N_G`` sampled graphs trains its own
    GCN, and each contributes ``S`` MC-dropout tables. With
    ``predict_on="observed"`` the tables are evaluated on ``g_obs``;
    ``"sampled"`` evaluates them on the graph the weights were trained on.
    Passing ``dist`` replaces the label-based copying distribution (and
    skips the base GCN).
    """
    k = n_classes if n_classes is not None else int(split.y_train.max()) + 1
    if dist is None:
        if base_table is None:
            base_table = gcn_classify(g_obs, x, split, config.gcn, seed, k)
        c_hat = np.argmax(base_table, axis=1)
        c_hat[split.train] = split.y_train
        dist = build_label_uniform(c_hat)
    op_obs = normalize_adjacency(g_obs)

    def member(i: int) -> np.ndarray:
        g_i = sample_graph(g_obs, dist, derive_rng(seed, "bgcn", "graph", i))
        model = gcn_train(g_i, x, split, config.gcn, derive_rng(seed, "bgcn", "train", i), k)
        op = op_obs if predict_on == "observed" else normalize_adjacency(g_i)
        tables = mc_dropout_predict(model, op, x, config.n_weight_samples, derive_rng(seed, "bgcn", "mc", i))
        return tables.mean(axis=0)

    means = ordered_map(member, range(config.n_graphs), workers)
    out = np.zeros_like(means[0])
    for m in means:
        out += m
    return out / config.n_graphs
