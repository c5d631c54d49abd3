"""Targeted DICE attacks and the node-copying error-correction defense."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, svd
from scipy.sparse.linalg import eigsh, svds
from scipy.spatial.distance import pdist, squareform
from scipy.special import softmax

from copygraph.copying import CopiedView, build_order_statistic
from copygraph.gcn import GcnConfig, GcnModel, LabelSplit, Matrix, gcn_forward, gcn_train, normalize_adjacency
from copygraph.graph import Graph
from copygraph.rng import derive_rng, ordered_map

logger = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 3000


@dataclass(frozen=True)
class AttackSpec:
    targets: np.ndarray
    beta_frac: float
    seed: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.targets, dtype=np.int64)
        object.__setattr__(self, "targets", t)
        if not 0 <= self.beta_frac <= 1:
            raise ValueError("beta_frac must lie in [0, 1]")
        if len(np.unique(t)) != len(t):
            raise ValueError("duplicate attack targets")

    def check_disjoint(self, train: np.ndarray) -> None:
        if np.intersect1d(self.targets, train).size:
            raise ValueError("attack targets overlap the training set")


@dataclass
class TargetEdit:
    target: int
    removed: list[int]
    added: list[int]
    shortfall: int = 0


@dataclass
class AttackResult:
    graph: Graph
    edits: list[TargetEdit] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "targets": [
                {"target": e.target, "removed": e.removed, "added": e.added, "shortfall": e.shortfall} for e in self.edits
            ]
        }


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def dice_attack(g: Graph, labels: np.ndarray, spec: AttackSpec, rng: np.random.Generator) -> AttackResult:
    """Delete same-class edges at each target and connect it across classes.

    Targets are processed in the given order on the progressively modified
    graph. Each removes ``round_half_up(beta * s)`` of its ``s`` same-class
    neighbors and gains as many edges to different-class non-neighbors.
    """
    if g.directed:
        raise ValueError("DICE expects an undirected graph")
    labels = np.asarray(labels)
    if np.any(labels[spec.targets] < 0):
        raise ValueError("every target needs a label")
    nbrs = [set(g.neighbors(v).tolist()) for v in range(g.n_nodes)]
    edits = []
    for t in spec.targets.tolist():
        lt = labels[t]
        same = np.array(sorted(u for u in nbrs[t] if labels[u] == lt), dtype=np.int64)
        r = round_half_up(spec.beta_frac * len(same))
        removed = np.sort(rng.choice(same, size=r, replace=False)) if r else np.zeros(0, dtype=np.int64)
        for u in removed.tolist():
            nbrs[t].discard(u)
            nbrs[u].discard(t)
        pool = np.flatnonzero((labels >= 0) & (labels != lt))
        pool = np.array([u for u in pool.tolist() if u not in nbrs[t] and u != t], dtype=np.int64)
        n_add = min(r, len(pool))
        if n_add < r:
            logger.warning("target %d: only %d of %d cross-class edges available", t, n_add, r)
        added = np.sort(rng.choice(pool, size=n_add, replace=False)) if n_add else np.zeros(0, dtype=np.int64)
        for u in added.tolist():
            nbrs[t].add(u)
            nbrs[u].add(t)
        edits.append(TargetEdit(t, removed.tolist(), added.tolist(), r - n_add))
    rows = np.repeat(np.arange(g.n_nodes), [len(s) for s in nbrs])
    cols = np.array([u for s in nbrs for u in sorted(s)], dtype=np.int64)
    adj = sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=g.adj.shape)
    return AttackResult(Graph(adj, directed=False), edits)


def _fix_signs(vecs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Flip columns so their first clearly nonzero entry is positive."""
    out = vecs.copy()
    for c in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, c]) > tol)
        if nz.size and out[nz[0], c] < 0:
            out[:, c] = -out[:, c]
    return out


def spectral_embedding(g: Graph, d: int, x: Matrix | None = None, feature_dim: int = 0) -> np.ndarray:
    """Top-``d`` eigenvectors of ``D^-1/2 (A + I) D^-1/2``.

    With ``x`` and ``feature_dim > 0``, the leading left singular vectors
    of ``x`` are appended as extra columns. Columns have unit norm and the
    first nonzero coordinate of each is positive.
    """
    n = g.n_nodes
    if not 1 <= d < n:
        raise ValueError(f"need 1 <= d < N, got d={d}, N={n}")
    op = normalize_adjacency(g.binary() if not g.directed else g)
    if n <= DENSE_EIG_LIMIT:
        _, vecs = eigh(op.toarray(), subset_by_index=[n - d, n - 1])
    else:
        _, vecs = eigsh(op, k=d, which="LA", v0=np.ones(n) / math.sqrt(n))
    # descending eigenvalue order
    emb = _fix_signs(vecs[:, ::-1])
    if x is not None and feature_dim > 0:
        m = min(feature_dim, min(x.shape) - 1)
        if sp.issparse(x) and min(x.shape) > DENSE_EIG_LIMIT:
            u, s, _ = svds(sp.csr_matrix(x, dtype=float), k=m, v0=np.ones(min(x.shape)) / math.sqrt(min(x.shape)))
            u = u[:, np.argsort(-s)]
        else:
            dense = x.toarray() if sp.issparse(x) else np.asarray(x, dtype=float)
            u = svd(dense, full_matrices=False)[0][:, :m]
        emb = np.hstack([emb, _fix_signs(u)])
    if not np.all(np.isfinite(emb)):
        raise np.linalg.LinAlgError("eigensolver returned non-finite vectors")
    return emb


def pairwise_distances(emb: np.ndarray) -> np.ndarray:
    return squareform(pdist(np.asarray(emb, dtype=float)))


# ---------------------------------------------------------------- defense


def _with_loop(idx: np.ndarray, w: np.ndarray, u: int) -> tuple[np.ndarray, np.ndarray]:
    # A + I: add the self-loop weight on top of any stored loop
    pos = np.searchsorted(idx, u)
    if pos < len(idx) and idx[pos] == u:
        w = w.copy()
        w[pos] += 1.0
        return idx, w
    return np.insert(idx, pos, u), np.insert(w, pos, 1.0)


def localized_logits(model: GcnModel, view: CopiedView, xw1: np.ndarray, base_deg: np.ndarray, v: int) -> np.ndarray:
    """Output logits of node ``v`` on a copied view, touching only its 2-hop field.

    ``xw1 = X @ W1`` and ``base_deg`` (row sums of ``A + I`` of the base
    graph) are precomputed once. A node's degree differs from the base only
    if its row changed, which can only happen at replaced nodes or their
    neighbors.
    """
    touched = set(view.replacements)
    for r in view.replacements:
        touched.update(view.row(r)[0].tolist())
        touched.update(view.base.neighbors(r).tolist())
    rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def row(u: int):
        if u not in rows:
            src = view.row(u) if u in touched else view.base.row(u)
            rows[u] = _with_loop(src[0], src[1], u)
        return rows[u]

    def deg(u: int) -> float:
        return float(row(u)[1].sum()) if u in touched else float(base_deg[u])

    idx_v, w_v = row(v)
    h = np.zeros((len(idx_v), xw1.shape[1]))
    for a, u in enumerate(idx_v.tolist()):
        idx_u, w_u = row(u)
        du = deg(u)
        coef = w_u / np.sqrt(du * np.array([deg(z) for z in idx_u.tolist()]))
        h[a] = np.maximum(coef @ xw1[idx_u], 0.0)
    dv = deg(v)
    coef_v = w_v / np.sqrt(dv * np.array([deg(u) for u in idx_v.tolist()]))
    return (coef_v @ h) @ model.w2


@dataclass(frozen=True)
class DefenseConfig:
    n_graphs: int = 10
    p_nearest: int = 10
    embed_dim: int = 16
    feature_dim: int = 16

    def __post_init__(self) -> None:
        if self.n_graphs < 1 or self.p_nearest < 1 or self.embed_dim < 1 or self.feature_dim < 0:
            raise ValueError("invalid defense configuration")


@dataclass
class DefenseResult:
    targets: np.ndarray
    target_rows: np.ndarray
    attacked_table: np.ndarray
    replacements: np.ndarray

    @property
    def table(self) -> np.ndarray:
        out = self.attacked_table.copy()
        out[self.targets] = self.target_rows
        return out


def defend_copying(
    g_attacked: Graph,
    x: Matrix,
    split: LabelSplit,
    targets: np.ndarray,
    config: DefenseConfig,
    seed: int,
    gcn_config: GcnConfig = GcnConfig(),
    n_classes: int | None = None,
    model: GcnModel | None = None,
    embedding: np.ndarray | None = None,
    workers: int = 1,
) -> DefenseResult:
    """Average a trained GCN's softmax over single-node copies of each target.

    Replacements for target ``v`` are drawn uniformly from its
    ``p_nearest`` closest nodes in embedding space. The classifier is
    trained once on the attacked graph and never retrained.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if model is None:
        model = gcn_train(g_attacked, x, split, gcn_config, derive_rng(seed, "defense", "train"), n_classes)
    op = normalize_adjacency(g_attacked)
    attacked_table = gcn_forward(model, op, x)
    if embedding is None:
        embedding = spectral_embedding(g_attacked, config.embed_dim, x, config.feature_dim)
    dist = build_order_statistic(pairwise_distances(embedding), config.p_nearest, nodes=targets)
    draws = dist.draw(derive_rng(seed, "defense", "replacements"), nodes=targets, size=config.n_graphs)
    xw1 = np.asarray(x @ model.w1)
    base_deg = np.asarray(g_attacked.adj.sum(axis=1)).ravel() + 1.0
    view = CopiedView(g_attacked)

    def one(a: int) -> np.ndarray:
        v = int(targets[a])
        logits = np.stack([localized_logits(model, view.copy(v, int(r)), xw1, base_deg, v) for r in draws[a]])
        return softmax(logits, axis=1).mean(axis=0)

    rows = np.stack(ordered_map(one, range(len(targets)), workers)) if len(targets) else np.zeros((0, model.n_classes))
    return DefenseResult(targets, rows, attacked_table, draws)
