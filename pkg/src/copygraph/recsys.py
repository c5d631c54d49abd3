"""Graph-conditioned BPR with node-copying ensembles (EBPR, SGBPR).

Embeddings depend on the interaction graph through one mean-aggregation
hop, ``e_u = (1 - lam) U_u + lam * mean(V_i for i in items(u))`` and the
symmetric rule for items, so scoring the same weights on a sampled graph
gives different predictions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

from copygraph.copying import CopyingDistribution, build_jaccard_user, copy_graph
from copygraph.graph import BipartiteGraph
from copygraph.rng import derive_rng, ordered_map

logger = logging.getLogger(__name__)


@dataclass
class BprModel:
    user_emb: np.ndarray
    item_emb: np.ndarray
    lam_prop: float = 0.5
    reg: float = 1e-4
    objective_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.user_emb.shape[1] != self.item_emb.shape[1] or self.user_emb.shape[1] < 1:
            raise ValueError("user and item embeddings need the same positive width")
        if not 0 <= self.lam_prop <= 1:
            raise ValueError("lam_prop must lie in [0, 1]")
        if self.reg < 0:
            raise ValueError("reg must be non-negative")

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]


@dataclass(frozen=True)
class BprConfig:
    dim: int = 32
    lam_prop: float = 0.5
    reg: float = 1e-4
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 256
    init_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.dim < 1 or self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid BPR configuration")


def _mean_operators(bg: BipartiteGraph) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    r = bg.matrix
    du = np.asarray(r.sum(axis=1)).ravel()
    di = np.asarray(r.sum(axis=0)).ravel()
    mu = sp.diags(np.divide(1.0, du, out=np.zeros_like(du), where=du > 0)) @ r
    mi = sp.diags(np.divide(1.0, di, out=np.zeros_like(di), where=di > 0)) @ r.T.tocsr()
    return sp.csr_matrix(mu), sp.csr_matrix(mi)


def _check_sizes(model: BprModel, bg: BipartiteGraph) -> None:
    if (model.n_users, model.n_items) != (bg.n_users, bg.n_items):
        raise ValueError(f"model is {model.n_users}x{model.n_items}, graph is {bg.n_users}x{bg.n_items}")


def embed(model: BprModel, bg: BipartiteGraph) -> tuple[np.ndarray, np.ndarray]:
    _check_sizes(model, bg)
    lam = model.lam_prop
    if lam == 0:
        return model.user_emb.copy(), model.item_emb.copy()
    mu, mi = _mean_operators(bg)
    eu = (1 - lam) * model.user_emb + lam * (mu @ model.item_emb)
    ei = (1 - lam) * model.item_emb + lam * (mi @ model.user_emb)
    return eu, ei


def score_matrix(model: BprModel, bg: BipartiteGraph) -> np.ndarray:
    eu, ei = embed(model, bg)
    return eu @ ei.T


def _sym_sigmoid(x: np.ndarray | float) -> np.ndarray:
    # sigma(x) + sigma(-x) == 1 exactly in floating point
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, expit(np.abs(x)), 1.0 - expit(np.abs(x)))


def rank_probability(model: BprModel, bg: BipartiteGraph, u: int, i: int, j: int) -> float:
    """``p(i >_u j) = sigmoid(e_u . e_i - e_u . e_j)`` under ``embed(model, bg)``."""
    if not (0 <= u < bg.n_users and 0 <= i < bg.n_items and 0 <= j < bg.n_items):
        raise IndexError(f"ids ({u}, {i}, {j}) out of range")
    eu, ei = embed(model, bg)
    return float(_sym_sigmoid(eu[u] @ ei[i] - eu[u] @ ei[j]))


def triple_probabilities(model: BprModel, bg: BipartiteGraph, triples: np.ndarray) -> np.ndarray:
    eu, ei = embed(model, bg)
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    x = np.einsum("bd,bd->b", eu[t[:, 0]], ei[t[:, 1]] - ei[t[:, 2]])
    return _sym_sigmoid(x)


# ------------------------------------------------------------------ training


def bpr_objective(model: BprModel, bg: BipartiteGraph, triples: np.ndarray) -> float:
    """``sum ln sigmoid(x_uij) - reg * ||Theta||^2`` over the given triples."""
    eu, ei = embed(model, bg)
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    x = np.einsum("bd,bd->b", eu[t[:, 0]], ei[t[:, 1]] - ei[t[:, 2]])
    penalty = model.reg * (np.sum(model.user_emb**2) + np.sum(model.item_emb**2))
    return float(np.sum(log_expit(x)) - penalty)


def bpr_gradient(model: BprModel, bg: BipartiteGraph, triples: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``scale * sum ln sigmoid(x) - reg ||Theta||^2`` w.r.t. ``(U, V)``."""
    lam = model.lam_prop
    mu, mi = _mean_operators(bg)
    eu = (1 - lam) * model.user_emb + lam * (mu @ model.item_emb)
    ei = (1 - lam) * model.item_emb + lam * (mi @ model.user_emb)
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    u, i, j = t[:, 0], t[:, 1], t[:, 2]
    diff = ei[i] - ei[j]
    g = scale * expit(-np.einsum("bd,bd->b", eu[u], diff))[:, None]
    d_eu = np.zeros_like(eu)
    d_ei = np.zeros_like(ei)
    np.add.at(d_eu, u, g * diff)
    np.add.at(d_ei, i, g * eu[u])
    np.add.at(d_ei, j, -g * eu[u])
    d_u = (1 - lam) * d_eu + lam * (mi.T @ d_ei) - 2 * model.reg * model.user_emb
    d_v = (1 - lam) * d_ei + lam * (mu.T @ d_eu) - 2 * model.reg * model.item_emb
    return np.asarray(d_u), np.asarray(d_v)


class TripleSampler:
    """Uniform ``(u, i, j)`` with ``(u, i)`` observed and ``j`` outside the forbidden set.

    The forbidden set of user ``u`` is its positives plus, when given, the
    exclusion pairs. Users left without any allowed negative are skipped.
    """

    def __init__(self, bg: BipartiteGraph, exclusion: sp.spmatrix | None = None):
        forbid = bg.matrix.astype(bool)
        if exclusion is not None:
            if exclusion.shape != bg.matrix.shape:
                raise ValueError("exclusion shape does not match the interaction matrix")
            forbid = (forbid + sp.csr_matrix(exclusion).astype(bool)).astype(bool)
        self.forbidden = forbid.toarray()
        allowed = self.forbidden.shape[1] - self.forbidden.sum(axis=1)
        self.skipped = np.flatnonzero(allowed == 0)
        if self.skipped.size:
            logger.warning("%d users have no admissible negative and are skipped", self.skipped.size)
        coo = bg.matrix.tocoo()
        keep = allowed[coo.row] > 0
        order = np.lexsort((coo.col[keep], coo.row[keep]))
        self.pos_users = coo.row[keep][order].astype(np.int64)
        self.pos_items = coo.col[keep][order].astype(np.int64)
        self.n_items = bg.n_items

    @property
    def n_positives(self) -> int:
        return len(self.pos_users)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.n_positives == 0:
            return np.zeros((0, 3), dtype=np.int64)
        k = rng.integers(0, self.n_positives, size=n)
        u, i = self.pos_users[k], self.pos_items[k]
        j = rng.integers(0, self.n_items, size=n)
        bad = self.forbidden[u, j]
        while bad.any():
            j[bad] = rng.integers(0, self.n_items, size=int(bad.sum()))
            bad = self.forbidden[u, j]
        return np.stack([u, i, j], axis=1)


def init_bpr(n_users: int, n_items: int, config: BprConfig, rng: np.random.Generator) -> BprModel:
    return BprModel(
        rng.normal(0.0, config.init_scale, size=(n_users, config.dim)),
        rng.normal(0.0, config.init_scale, size=(n_items, config.dim)),
        config.lam_prop,
        config.reg,
    )


def bpr_train(
    bg: BipartiteGraph,
    config: BprConfig,
    rng: np.random.Generator,
    exclusion: sp.spmatrix | None = None,
) -> BprModel:
    """Minibatch SGD ascent on the BPR objective.

    An epoch draws as many triples as there are admissible positives.
    Each step follows the gradient of the objective restricted to the
    batch: summed log-likelihood minus the full L2 penalty. The recorded
    history is the per-triple mean log-likelihood minus the penalty.
    """
    if np.any(np.diff(bg.matrix.indptr) == 0):
        raise ValueError("every user needs at least one positive")
    model = init_bpr(bg.n_users, bg.n_items, config, rng)
    sampler = TripleSampler(bg, exclusion)
    history = []
    n = sampler.n_positives
    for _ in range(config.epochs):
        done, total = 0, 0.0
        while done < n:
            b = min(config.batch_size, n - done)
            t = sampler.sample(b, rng)
            penalty = model.reg * (np.sum(model.user_emb**2) + np.sum(model.item_emb**2))
            total += (bpr_objective(model, bg, t) + penalty) - b * penalty
            du, dv = bpr_gradient(model, bg, t)
            model.user_emb = model.user_emb + config.learning_rate * du
            model.item_emb = model.item_emb + config.learning_rate * dv
            done += b
        history.append(total / max(n, 1))
    return replace(model, objective_history=history)


# ---------------------------------------------------------------- sampling


def sample_bipartite(bg: BipartiteGraph, dist: CopyingDistribution, rng: np.random.Generator) -> BipartiteGraph:
    """Copy on the undirected user-item graph.

    A user keeps its own items and gains those of its sampled replacement,
    as with any undirected copy; items copy themselves.
    """
    if dist.n_nodes != bg.n_users + bg.n_items:
        raise ValueError("distribution must live on the U + I nodes")
    copied = copy_graph(bg.to_graph(), dist.draw(rng))
    block = copied.adj[: bg.n_users, bg.n_users :]
    return BipartiteGraph(bg.n_users, bg.n_items, sp.csr_matrix(block))


def sampled_graphs(bg: BipartiteGraph, dist: CopyingDistribution, n_graphs: int, seed: int, stream: str, workers: int = 1) -> list[BipartiteGraph]:
    if n_graphs < 1:
        raise ValueError("N_G must be >= 1")
    return ordered_map(lambda i: sample_bipartite(bg, dist, derive_rng(seed, stream, i)), range(n_graphs), workers)


def expected_interactions(graphs: list[BipartiteGraph]) -> sp.csr_matrix:
    """Entrywise mean of sampled interaction matrices; entries below ``1/(2 N_G)`` dropped."""
    total = sp.csr_matrix(graphs[0].matrix.shape)
    for g in graphs:
        total = total + g.matrix
    mean = sp.csr_matrix(total / len(graphs))
    mean.data[mean.data < 1.0 / (2 * len(graphs))] = 0.0
    mean.eliminate_zeros()
    return mean


def ensemble_scores(model: BprModel, graphs: list[BipartiteGraph], workers: int = 1) -> np.ndarray:
    mats = ordered_map(lambda g: score_matrix(model, g), graphs, workers)
    out = np.zeros_like(mats[0])
    for m in mats:
        out += m
    return out / len(mats)


def ensemble_triple_probabilities(model: BprModel, graphs: list[BipartiteGraph], triples: np.ndarray) -> np.ndarray:
    """Monte Carlo mean of ``p(i >_u j | G_k, W)`` over the sampled graphs."""
    out = np.zeros(len(np.asarray(triples).reshape(-1, 3)))
    for g in graphs:
        out += triple_probabilities(model, g, triples)
    return out / len(graphs)


# ---------------------------------------------------------------- metrics


def recall_at_k(recommendations: np.ndarray, positives: set[int] | np.ndarray, k: int) -> float:
    pos = set(np.asarray(list(positives)).tolist())
    if not pos:
        raise ValueError("recall needs at least one positive")
    return len(pos.intersection(np.asarray(recommendations)[:k].tolist())) / len(pos)


def ndcg_at_k(recommendations: np.ndarray, positives: set[int] | np.ndarray, k: int) -> float:
    pos = set(np.asarray(list(positives)).tolist())
    if not pos:
        raise ValueError("NDCG needs at least one positive")
    recs = np.asarray(recommendations)[:k].tolist()
    dcg = sum(1.0 / math.log2(n + 2) for n, item in enumerate(recs) if item in pos)
    idcg = sum(1.0 / math.log2(n + 2) for n in range(min(k, len(pos))))
    return dcg / idcg


def top_k(scores: np.ndarray, train: BipartiteGraph, k: int) -> np.ndarray:
    """Highest-scoring items per user, training positives excluded, ties to lower id."""
    s = np.array(scores, dtype=float)
    s[train.matrix.nonzero()] = -np.inf
    return np.argsort(-s, axis=1, kind="stable")[:, :k]


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    users: np.ndarray
    recall: dict[int, np.ndarray]
    ndcg: dict[int, np.ndarray]

    def summary(self) -> dict[str, float]:
        out = {}
        for k in self.ks:
            out[f"recall@{k}"] = float(self.recall[k].mean()) if self.users.size else 0.0
            out[f"ndcg@{k}"] = float(self.ndcg[k].mean()) if self.users.size else 0.0
        return out

    def per_user_rows(self) -> list[dict]:
        rows = []
        for a, u in enumerate(self.users.tolist()):
            row = {"user": u}
            for k in self.ks:
                row[f"recall@{k}"] = float(self.recall[k][a])
                row[f"ndcg@{k}"] = float(self.ndcg[k][a])
            rows.append(row)
        return rows


def evaluate_scores(scores: np.ndarray, train: BipartiteGraph, test: BipartiteGraph, ks: tuple[int, ...] = (10, 20)) -> MetricsReport:
    recs = top_k(scores, train, max(ks))
    users = np.flatnonzero(np.diff(test.matrix.indptr) > 0)
    skipped = test.n_users - users.size
    if skipped:
        logger.info("%d users without test positives are excluded from metrics", skipped)
    recall = {k: np.zeros(users.size) for k in ks}
    ndcg = {k: np.zeros(users.size) for k in ks}
    for a, u in enumerate(users.tolist()):
        pos = set(test.items_of(u).tolist())
        for k in ks:
            recall[k][a] = recall_at_k(recs[u], pos, k)
            ndcg[k][a] = ndcg_at_k(recs[u], pos, k)
    return MetricsReport(tuple(ks), users, recall, ndcg)


def auc(scores: np.ndarray, train: BipartiteGraph, test: BipartiteGraph) -> float:
    """Mean per-user AUC of test positives against never-observed items."""
    vals = []
    seen = (train.matrix + test.matrix).toarray() > 0
    for u in range(test.n_users):
        pos = test.items_of(u)
        neg = np.flatnonzero(~seen[u])
        if pos.size == 0 or neg.size == 0:
            continue
        sp_, sn = scores[u, pos], np.sort(scores[u, neg])
        below = np.searchsorted(sn, sp_, side="left")
        ties = np.searchsorted(sn, sp_, side="right") - below
        vals.append(float(np.mean((below + 0.5 * ties) / neg.size)))
    return float(np.mean(vals))


# ---------------------------------------------------------------- pipelines


@dataclass(frozen=True)
class EnsembleSpec:
    n_graphs: int = 10
    threshold: float = 0.1
    include_self: bool = True
    resample_eval: bool = False

    def __post_init__(self) -> None:
        if self.n_graphs < 1:
            raise ValueError("N_G must be >= 1")
        if self.threshold <= 0:
            raise ValueError("threshold b must be positive")


def ebpr_evaluate(
    model: BprModel,
    train: BipartiteGraph,
    test: BipartiteGraph,
    spec: EnsembleSpec,
    seed: int,
    dist: CopyingDistribution | None = None,
    workers: int = 1,
) -> tuple[MetricsReport, np.ndarray]:
    """Score with the trained model averaged over Jaccard-copied graphs; no retraining."""
    d = dist if dist is not None else build_jaccard_user(train, include_self=spec.include_self)
    graphs = sampled_graphs(train, d, spec.n_graphs, seed, "ebpr", workers)
    scores = ensemble_scores(model, graphs, workers)
    return evaluate_scores(scores, train, test), scores


@dataclass
class SgbprResult:
    model: BprModel
    report: MetricsReport
    scores: np.ndarray
    exclusion: sp.csr_matrix
    skipped_users: np.ndarray


def sgbpr_train_evaluate(
    train: BipartiteGraph,
    test: BipartiteGraph,
    spec: EnsembleSpec,
    config: BprConfig,
    seed: int,
    dist: CopyingDistribution | None = None,
    workers: int = 1,
) -> SgbprResult:
    """Prune likely positives from the negative pool, retrain, then ensemble-evaluate.

    The pruned set is every user-item pair whose estimated copy frequency
    exceeds ``spec.threshold``. Evaluation reuses the estimation graphs
    unless ``spec.resample_eval`` is set.
    """
    d = dist if dist is not None else build_jaccard_user(train, include_self=spec.include_self)
    graphs = sampled_graphs(train, d, spec.n_graphs, seed, "sgbpr-estimate", workers)
    a_hat = expected_interactions(graphs)
    g_b = sp.csr_matrix(a_hat > spec.threshold, dtype=float)
    sampler_probe = TripleSampler(train, g_b)
    model = bpr_train(train, config, derive_rng(seed, "sgbpr", "train"), exclusion=g_b)
    if spec.resample_eval:
        graphs = sampled_graphs(train, d, spec.n_graphs, seed, "sgbpr-evaluate", workers)
    scores = ensemble_scores(model, graphs, workers)
    return SgbprResult(model, evaluate_scores(scores, train, test), scores, g_b, sampler_probe.skipped)


# ---------------------------------------------------------------- data prep


def planted_interactions(
    n_users: int,
    n_items: int,
    n_blocks: int,
    p_in: float,
    p_out: float,
    rng: np.random.Generator,
) -> tuple[BipartiteGraph, np.ndarray, np.ndarray]:
    """Users interact with items of their own block w.p. ``p_in``, others w.p. ``p_out``.

    Every user keeps at least one interaction.
    """
    ub = rng.integers(0, n_blocks, size=n_users)
    ib = rng.integers(0, n_blocks, size=n_items)
    p = np.where(ub[:, None] == ib[None, :], p_in, p_out)
    r = rng.random((n_users, n_items)) < p
    empty = np.flatnonzero(~r.any(axis=1))
    r[empty, rng.integers(0, n_items, size=empty.size)] = True
    return BipartiteGraph(n_users, n_items, sp.csr_matrix(r, dtype=float)), ub, ib


def filter_interactions(pairs: list[tuple[int, int]], threshold: int) -> tuple[list[tuple[int, int]], dict[int, int], dict[int, int]]:
    """Drop users and items with fewer than ``threshold`` interactions until stable.

    Returns the surviving pairs with compact ids and the old-to-new maps.
    """
    arr = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    while arr.size:
        users, uc = np.unique(arr[:, 0], return_counts=True)
        items, ic = np.unique(arr[:, 1], return_counts=True)
        ok_u = set(users[uc >= threshold].tolist())
        ok_i = set(items[ic >= threshold].tolist())
        keep = np.array([u in ok_u and i in ok_i for u, i in arr.tolist()], dtype=bool)
        if keep.all():
            break
        arr = arr[keep]
    umap = {int(u): k for k, u in enumerate(np.unique(arr[:, 0]).tolist())} if arr.size else {}
    imap = {int(i): k for k, i in enumerate(np.unique(arr[:, 1]).tolist())} if arr.size else {}
    return [(umap[u], imap[i]) for u, i in arr.tolist()], umap, imap


def split_interactions(
    bg: BipartiteGraph,
    rng: np.random.Generator,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> tuple[BipartiteGraph, BipartiteGraph, BipartiteGraph]:
    """Per-user random split into train / validation / test.

    Every user with an interaction keeps at least one training item.
    """
    if not math.isclose(sum(fractions), 1.0) or min(fractions) < 0:
        raise ValueError("fractions must be non-negative and sum to 1")
    parts: list[list[tuple[int, int]]] = [[], [], []]
    for u in range(bg.n_users):
        items = rng.permutation(bg.items_of(u))
        n = len(items)
        n_test = int(round(fractions[2] * n))
        n_val = int(round(fractions[1] * n))
        while n > 0 and n - n_test - n_val < 1:
            if n_val:
                n_val -= 1
            else:
                n_test -= 1
        n_train = n - n_test - n_val
        for part, chunk in zip(parts, (items[:n_train], items[n_train : n_train + n_val], items[n_train + n_val :])):
            part.extend((u, int(i)) for i in chunk)
    return tuple(BipartiteGraph.from_pairs(bg.n_users, bg.n_items, p) for p in parts)  # type: ignore[return-value]


def save_bpr_model(model: BprModel, path: str | Path) -> None:
    doc = {
        "lam_prop": model.lam_prop,
        "reg": model.reg,
        "user_emb": model.user_emb.tolist(),
        "item_emb": model.item_emb.tolist(),
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_bpr_model(path: str | Path) -> BprModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return BprModel(np.array(doc["user_emb"], dtype=float), np.array(doc["item_emb"], dtype=float), float(doc["lam_prop"]), float(doc["reg"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"{path}: not a BPR model file ({exc})") from None
