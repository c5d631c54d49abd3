"""Node-copying random graph model.

A replacement vector ``zeta`` maps every node ``i`` to a node ``zeta[i]``
whose out-row it takes over: ``A_G = C_zeta @ A_obs``, where ``C_zeta`` is
the selection matrix with a single one per row at column ``zeta[i]``.
Entries of ``zeta`` are drawn independently from a per-node categorical
:class:`CopyingDistribution`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from copygraph.graph import BipartiteGraph, Graph, GraphFormatError, symmetrize
from copygraph.rng import derive_rng, ordered_map

logger = logging.getLogger(__name__)

Provenance = Literal["label-uniform", "knn", "order-statistic", "jaccard", "custom", "identity"]

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class CopyingDistribution:
    """Row ``j`` of ``probs`` is ``p(zeta^j = . | G_obs, D)``."""

    probs: sp.csr_matrix
    kind: Provenance = "custom"

    def __post_init__(self) -> None:
        p = sp.csr_matrix(self.probs, dtype=np.float64)
        p.eliminate_zeros()
        p.sort_indices()
        n = p.shape[0]
        if p.shape != (n, n):
            raise ValueError(f"copying distribution must be square, got {p.shape}")
        if p.nnz and p.data.min() < 0:
            raise ValueError("negative copying probability")
        sums = np.asarray(p.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > _ROW_SUM_TOL)
        if bad.size:
            raise ValueError(f"rows {bad[:5].tolist()} do not sum to 1")
        object.__setattr__(self, "probs", p)
        cum = np.cumsum(p.data)
        # row-local cumulative mass shifted to a global, strictly increasing axis
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "_row_base", np.concatenate([[0.0], cum])[p.indptr[:-1]])

    @property
    def n_nodes(self) -> int:
        return self.probs.shape[0]

    def row(self, j: int) -> dict[int, float]:
        lo, hi = self.probs.indptr[j], self.probs.indptr[j + 1]
        return {int(c): float(v) for c, v in zip(self.probs.indices[lo:hi], self.probs.data[lo:hi])}

    def support_size(self) -> np.ndarray:
        return np.diff(self.probs.indptr)

    def is_deterministic(self) -> bool:
        return bool(np.all(self.support_size() == 1))

    def draw(self, rng: np.random.Generator, nodes: np.ndarray | None = None, size: int | None = None) -> np.ndarray:
        """Inverse-CDF draws for the given rows (all rows by default).

        With ``size`` set, returns ``len(nodes) x size`` independent draws.
        """
        p = self.probs
        rows = np.arange(self.n_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
        shape = (len(rows),) if size is None else (len(rows), size)
        u = rng.random(shape)
        base = self._row_base[rows]
        lo, hi = p.indptr[rows], p.indptr[rows + 1]
        if size is not None:
            base, lo, hi = base[:, None], lo[:, None], hi[:, None]
        row_mass = self._cum[hi - 1] - base
        pos = np.searchsorted(self._cum, base + u * row_mass, side="right")
        pos = np.clip(pos, lo, hi - 1)
        return p.indices[pos].astype(np.int64)


def identity_distribution(n: int) -> CopyingDistribution:
    """Every node copies itself; the sampled graph is always ``G_obs``."""
    return CopyingDistribution(sp.identity(n, format="csr"), kind="identity")


def _uniform_rows(n: int, candidates: list[np.ndarray], kind: Provenance) -> CopyingDistribution:
    lengths = np.array([len(c) for c in candidates], dtype=np.int64)
    if np.any(lengths == 0):
        raise ValueError(f"node {int(np.flatnonzero(lengths == 0)[0])} has no copy candidates")
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    indices = np.concatenate(candidates) if candidates else np.zeros(0, dtype=np.int64)
    data = np.repeat(1.0 / lengths, lengths)
    return CopyingDistribution(sp.csr_matrix((data, indices, indptr), shape=(n, n)), kind=kind)


def build_label_uniform(labels_or_softmax: np.ndarray) -> CopyingDistribution:
    """Uniform over all nodes sharing node ``j``'s (predicted) label.

    Accepts a label vector or an ``N x K`` softmax table (argmax, ties to
    the smaller class id). Node ``j`` is in its own class, so self-copy has
    probability ``1/|C_k|``.
    """
    arr = np.asarray(labels_or_softmax)
    labels = np.argmax(arr, axis=1) if arr.ndim == 2 else arr.astype(np.int64)
    if np.any(labels < 0):
        raise ValueError(f"node {int(np.flatnonzero(labels < 0)[0])} has no label")
    n = len(labels)
    members = {int(k): np.flatnonzero(labels == k) for k in np.unique(labels)}
    return _uniform_rows(n, [members[int(k)] for k in labels], "label-uniform")


def _nearest(dist_rows: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps ascending node id among equal distances
    return np.argsort(dist_rows, axis=1, kind="stable")[:, :k]


def build_knn_embedding(embeddings: np.ndarray, k: int, chunk: int = 1024) -> CopyingDistribution:
    """Uniform over the ``k`` nearest other nodes in Euclidean distance."""
    e = np.asarray(embeddings, dtype=float)
    n = e.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= K < N, got K={k}, N={n}")
    if not np.all(np.isfinite(e)):
        raise ValueError("embeddings must be finite")
    cands = []
    for lo in range(0, n, chunk):
        d = cdist(e[lo : lo + chunk], e)
        d[np.arange(d.shape[0]), np.arange(lo, lo + d.shape[0])] = np.inf
        cands.extend(np.sort(_nearest(d, k), axis=1))
    return _uniform_rows(n, cands, "knn")


def build_order_statistic(distance_matrix: np.ndarray, p: int, nodes: np.ndarray | None = None) -> CopyingDistribution:
    """Uniform over the ``p`` nodes with the smallest distances to ``v``.

    Self is excluded and ties go to the smaller node id. When ``nodes`` is
    given, only those rows are built; the others copy themselves.
    """
    d = np.asarray(distance_matrix, dtype=float)
    n = d.shape[0]
    if not 1 <= p < n:
        raise ValueError(f"need 1 <= P < N, got P={p}, N={n}")
    rows = np.arange(n) if nodes is None else np.asarray(nodes, dtype=np.int64)
    sub = d[rows].copy()
    sub[np.arange(len(rows)), rows] = np.inf
    near = np.sort(_nearest(sub, p), axis=1)
    cands: list[np.ndarray] = [np.array([i]) for i in range(n)]
    for r, c in zip(rows, near):
        cands[int(r)] = c
    return _uniform_rows(n, cands, "order-statistic")


def jaccard_matrix(bg: BipartiteGraph) -> sp.csr_matrix:
    """Sparse user-user Jaccard index of item sets; empty-vs-empty is 0."""
    r = bg.matrix
    inter = (r @ r.T).tocoo()
    sizes = np.asarray(r.sum(axis=1)).ravel()
    union = sizes[inter.row] + sizes[inter.col] - inter.data
    return sp.csr_matrix((inter.data / union, (inter.row, inter.col)), shape=(bg.n_users, bg.n_users))


def build_jaccard_user(bg: BipartiteGraph, include_self: bool = True) -> CopyingDistribution:
    """Users copy users with probability proportional to item-set Jaccard.

    The distribution lives on the ``U + I`` nodes of ``bg.to_graph()``.
    Item rows copy themselves. A user whose row has no mass (empty item
    set, or no overlapping peer when ``include_self`` is false) falls back
    to self-copy.
    """
    rho = jaccard_matrix(bg).tolil()
    if not include_self:
        rho.setdiag(0)
    rho = rho.tocsr()
    rho.eliminate_zeros()
    sums = np.asarray(rho.sum(axis=1)).ravel()
    empty = np.flatnonzero(sums == 0)
    if empty.size:
        logger.info("%d users have no Jaccard mass; they copy themselves", empty.size)
        rho = rho + sp.csr_matrix((np.ones(empty.size), (empty, empty)), shape=rho.shape)
        sums[empty] = 1.0
    user_block = sp.diags(1.0 / sums) @ rho
    n = bg.n_users + bg.n_items
    probs = sp.block_diag([user_block, sp.identity(bg.n_items)], format="csr")
    return CopyingDistribution(sp.csr_matrix(probs, shape=(n, n)), kind="jaccard")


def sample_zeta(dist: CopyingDistribution, rng: np.random.Generator) -> np.ndarray:
    return dist.draw(rng)


def _check_zeta(g: Graph, zeta: np.ndarray) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=np.int64)
    if zeta.shape != (g.n_nodes,):
        raise ValueError(f"replacement vector has length {zeta.shape}, graph has {g.n_nodes} nodes")
    if zeta.size and (zeta.min() < 0 or zeta.max() >= g.n_nodes):
        raise ValueError("replacement node out of range")
    return zeta


def apply_copy(g_obs: Graph, zeta: np.ndarray) -> Graph:
    """``C_zeta @ A``: row ``i`` of the result is row ``zeta[i]`` of ``g_obs``.

    The result is directed; see :func:`apply_copy_undirected` for the
    symmetrized variant.
    """
    zeta = _check_zeta(g_obs, zeta)
    return Graph(g_obs.adj[zeta], directed=True)


def apply_copy_undirected(g_obs: Graph, zeta: np.ndarray) -> Graph:
    """Copy on the directed view, then ``A_ij = max(A'_ij, A'_ji)``."""
    return symmetrize(apply_copy(g_obs, zeta))


def copy_graph(g_obs: Graph, zeta: np.ndarray) -> Graph:
    return apply_copy(g_obs, zeta) if g_obs.directed else apply_copy_undirected(g_obs, zeta)


def sample_graph(g_obs: Graph, dist: CopyingDistribution, rng: np.random.Generator) -> Graph:
    if dist.n_nodes != g_obs.n_nodes:
        raise ValueError("distribution and graph sizes differ")
    return copy_graph(g_obs, sample_zeta(dist, rng))


@dataclass(frozen=True)
class ExpectedAdjacency:
    matrix: sp.csr_matrix
    n_samples: int
    directed: bool = False


def estimate_expected_adjacency(
    g_obs: Graph,
    dist: CopyingDistribution,
    n_samples: int,
    seed: int,
    workers: int = 1,
    stream: str = "expected-adjacency",
) -> ExpectedAdjacency:
    """Entrywise mean of ``n_samples`` sampled adjacency matrices.

    Sample ``i`` uses the stream ``(seed, stream, i)``. Entries below
    ``1 / (2 n_samples)`` are dropped.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")

    def one(i: int) -> sp.csr_matrix:
        return sample_graph(g_obs, dist, derive_rng(seed, stream, i)).adj

    total = sp.csr_matrix(g_obs.adj.shape)
    for a in ordered_map(one, range(n_samples), workers):
        total = total + a
    mean = (total / n_samples).tocsr()
    mean.data[mean.data < 1.0 / (2 * n_samples)] = 0.0
    mean.eliminate_zeros()
    return ExpectedAdjacency(mean, n_samples, directed=g_obs.directed)


def threshold_binary(ea: ExpectedAdjacency, b: float) -> Graph:
    """Binary graph keeping entries strictly greater than ``b``."""
    if not 0 < b:
        raise ValueError("threshold must be positive")
    m = ea.matrix.copy()
    m.data = (m.data > b).astype(float)
    m.eliminate_zeros()
    return Graph(m, directed=ea.directed)


class CopiedView:
    """``g_obs`` with a few nodes' out-rows replaced, without materializing.

    Undirected graphs follow copy-then-symmetrize on the directed view, so
    a copied node ``v`` ends up adjacent to the union of its old neighbors
    and those of its replacement. Replacements always read rows of
    ``g_obs``, so successive copies at distinct nodes commute.
    """

    def __init__(self, g_obs: Graph, replacements: Mapping[int, int] | None = None):
        self.base = g_obs
        self.replacements: dict[int, int] = {}
        for v, r in (replacements or {}).items():
            self._check(v, r)
            self.replacements[int(v)] = int(r)

    def _check(self, v: int, r: int) -> None:
        n = self.base.n_nodes
        if not (0 <= v < n and 0 <= r < n):
            raise IndexError(f"copy ({v} <- {r}) out of range for {n} nodes")

    def copy(self, v: int, replacement: int) -> "CopiedView":
        self._check(v, replacement)
        return CopiedView(self.base, {**self.replacements, int(v): int(replacement)})

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes

    def zeta(self) -> np.ndarray:
        z = np.arange(self.n_nodes)
        for v, r in self.replacements.items():
            z[v] = r
        return z

    def materialize(self) -> Graph:
        return copy_graph(self.base, self.zeta())

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbors and weights of node ``i`` in the copied graph."""
        base = self.base
        src = self.replacements.get(i, i)
        idx, w = base.row(src)
        if base.directed:
            return idx.copy(), w.copy()
        entries: dict[int, float] = dict(zip(idx.tolist(), w.tolist()))
        # reverse arcs j -> i: unchanged rows contribute A[j, i] = A[i, j]
        own_idx, own_w = base.row(i)
        for j, x in zip(own_idx.tolist(), own_w.tolist()):
            if j not in self.replacements:
                entries[j] = max(entries.get(j, 0.0), x)
        for j, rj in self.replacements.items():
            lo, hi = base.adj.indptr[rj], base.adj.indptr[rj + 1]
            pos = np.searchsorted(base.adj.indices[lo:hi], i)
            if pos < hi - lo and base.adj.indices[lo + pos] == i:
                entries[j] = max(entries.get(j, 0.0), float(base.adj.data[lo + pos]))
        if not entries:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        keys = np.array(sorted(entries), dtype=np.int64)
        return keys, np.array([entries[k] for k in keys.tolist()])

    def degree(self, i: int) -> int:
        return len(self.row(i)[0])


def copy_single_node(g_obs: Graph, v: int, replacement: int) -> CopiedView:
    return CopiedView(g_obs).copy(v, replacement)


# ---------------------------------------------------------------- file I/O


def write_distribution(dist: CopyingDistribution, path: str | Path) -> None:
    coo = dist.probs.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "candidate", "prob"])
        for r, c, p in zip(coo.row[order], coo.col[order], coo.data[order]):
            w.writerow([int(r), int(c), repr(float(p))])


def load_distribution(path: str | Path, n_nodes: int | None = None) -> CopyingDistribution:
    """Read ``node,candidate,prob`` triplets; nodes without rows copy themselves."""
    path = Path(path)
    rows, cols, vals = [], [], []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].startswith("#") or (lineno == 1 and rec[0] == "node"):
                continue
            if len(rec) != 3:
                raise GraphFormatError("expected 'node,candidate,prob'", lineno, path)
            try:
                rows.append(int(rec[0]))
                cols.append(int(rec[1]))
                vals.append(float(rec[2]))
            except ValueError:
                raise GraphFormatError(f"cannot parse {rec}", lineno, path) from None
    n = n_nodes if n_nodes is not None else max(rows + cols, default=-1) + 1
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    missing = np.flatnonzero(np.diff(m.indptr) == 0)
    if missing.size:
        m = m + sp.csr_matrix((np.ones(missing.size), (missing, missing)), shape=(n, n))
    return CopyingDistribution(m, kind="custom")


def write_zeta(zeta: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "zeta"])
        for i, z in enumerate(np.asarray(zeta)):
            w.writerow([i, int(z)])


def load_zeta(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    out = np.empty(len(data), dtype=np.int64)
    out[data[:, 0]] = data[:, 1]
    return out
