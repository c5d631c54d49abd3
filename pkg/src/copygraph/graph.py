"""Graph containers and file ingestion.

A :class:`Graph` wraps a CSR adjacency matrix. Undirected graphs store both
arcs of every edge, so out-rows are the unit every other module operates on.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

DegreeMode = Literal["in", "out", "total"]


class GraphFormatError(ValueError):
    """Raised when an input file does not parse; carries the 1-based line."""

    def __init__(self, message: str, line: int | None = None, path: str | Path | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


def _canonical_csr(adj: sp.spmatrix, n: int) -> sp.csr_matrix:
    m = sp.csr_matrix(adj, shape=(n, n), dtype=np.float64)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class Graph:
    """Weighted sparse graph; immutable by convention after construction.

    ``adj[i, j] = w`` is an arc ``i -> j`` of weight ``w > 0``. When
    ``directed`` is false the matrix is symmetric.
    """

    adj: sp.csr_matrix
    directed: bool = False

    def __post_init__(self) -> None:
        n = self.adj.shape[0]
        if self.adj.shape != (n, n):
            raise ValueError(f"adjacency must be square, got {self.adj.shape}")
        object.__setattr__(self, "adj", _canonical_csr(self.adj, n))
        if self.adj.nnz and self.adj.data.min() <= 0:
            raise ValueError("edge weights must be strictly positive")
        if not np.all(np.isfinite(self.adj.data)):
            raise ValueError("edge weights must be finite")
        if not self.directed and (self.adj != self.adj.T).nnz:
            raise ValueError("undirected graph requires a symmetric adjacency")

    @classmethod
    def from_edges(
        cls,
        n_nodes: int,
        edges: Iterable[tuple[int, int]] | Iterable[tuple[int, int, float]],
        directed: bool = False,
    ) -> "Graph":
        """Build a graph from ``(src, dst[, weight])`` tuples.

        For undirected graphs each edge is given once; both arcs are stored.
        """
        src, dst, w = [], [], []
        for e in edges:
            src.append(int(e[0]))
            dst.append(int(e[1]))
            w.append(float(e[2]) if len(e) > 2 else 1.0)
        src_a = np.asarray(src, dtype=np.int64)
        dst_a = np.asarray(dst, dtype=np.int64)
        w_a = np.asarray(w, dtype=float)
        if len(src_a) and (min(src_a.min(), dst_a.min()) < 0 or max(src_a.max(), dst_a.max()) >= n_nodes):
            raise ValueError("edge endpoint out of range")
        if not directed:
            loops = src_a == dst_a
            src_a, dst_a, w_a = (
                np.concatenate([src_a, dst_a[~loops]]),
                np.concatenate([dst_a, src_a[~loops]]),
                np.concatenate([w_a, w_a[~loops]]),
            )
        adj = sp.coo_matrix((w_a, (src_a, dst_a)), shape=(n_nodes, n_nodes)).tocsr()
        # duplicates would be summed by coo->csr; take the max instead
        if adj.nnz != len(set(zip(src_a.tolist(), dst_a.tolist()))):
            raise ValueError("duplicate edges")
        return cls(adj, directed=directed)

    @classmethod
    def empty(cls, n_nodes: int, directed: bool = False) -> "Graph":
        return cls(sp.csr_matrix((n_nodes, n_nodes)), directed=directed)

    @property
    def n_nodes(self) -> int:
        return self.adj.shape[0]

    @property
    def n_arcs(self) -> int:
        return int(self.adj.nnz)

    @property
    def n_edges(self) -> int:
        """Directed arcs, or undirected edges counted once (self-loops once)."""
        if self.directed:
            return self.n_arcs
        loops = int(np.count_nonzero(self.adj.diagonal()))
        return (self.n_arcs + loops) // 2

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.adj.indptr)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.adj.indices, minlength=self.n_nodes)

    def neighbors(self, v: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[v] : self.adj.indptr[v + 1]]

    def row(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.adj.indptr[v], self.adj.indptr[v + 1]
        return self.adj.indices[lo:hi], self.adj.data[lo:hi]

    def edges(self) -> list[tuple[int, int, float]]:
        """Edge triples; undirected edges listed once with ``src <= dst``."""
        coo = self.adj.tocoo()
        keep = np.ones(coo.nnz, dtype=bool) if self.directed else coo.row <= coo.col
        order = np.lexsort((coo.col[keep], coo.row[keep]))
        r, c, w = coo.row[keep][order], coo.col[keep][order], coo.data[keep][order]
        return [(int(a), int(b), float(x)) for a, b, x in zip(r, c, w)]

    def binary(self) -> "Graph":
        adj = self.adj.copy()
        adj.data[:] = 1.0
        return Graph(adj, directed=self.directed)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.directed == other.directed
            and self.adj.shape == other.adj.shape
            and np.array_equal(self.adj.indptr, other.adj.indptr)
            and np.array_equal(self.adj.indices, other.adj.indices)
            and np.array_equal(self.adj.data, other.adj.data)
        )

    def __hash__(self) -> int:  # pragma: no cover - identity hashing for caches
        return id(self)

    def __repr__(self) -> str:
        kind = "directed" if self.directed else "undirected"
        return f"Graph({kind}, n_nodes={self.n_nodes}, n_edges={self.n_edges})"


@dataclass(frozen=True)
class NodeLabels:
    """Per-node class ids; ``-1`` marks an unlabeled node."""

    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.size and labels.max() >= self.n_classes:
            raise ValueError("label id exceeds n_classes")
        if labels.size and labels.min() < -1:
            raise ValueError("labels must be >= 0, or -1 for absent")

    @classmethod
    def from_array(cls, labels: np.ndarray | list[int]) -> "NodeLabels":
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
        return cls(labels, k)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.labels >= 0))


@dataclass(frozen=True)
class BipartiteGraph:
    """User-item interactions as a binary ``n_users x n_items`` CSR matrix."""

    n_users: int
    n_items: int
    matrix: sp.csr_matrix = field(repr=False)

    def __post_init__(self) -> None:
        m = sp.csr_matrix(self.matrix, shape=(self.n_users, self.n_items), dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.data[:] = 1.0
        m.sort_indices()
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_pairs(cls, n_users: int, n_items: int, pairs: Iterable[tuple[int, int]]) -> "BipartiteGraph":
        pairs = list(pairs)
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate interactions")
        u = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        i = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
        if len(pairs) and (u.min() < 0 or u.max() >= n_users or i.min() < 0 or i.max() >= n_items):
            raise ValueError("interaction index out of range")
        m = sp.coo_matrix((np.ones(len(pairs)), (u, i)), shape=(n_users, n_items)).tocsr()
        return cls(n_users, n_items, m)

    @property
    def n_interactions(self) -> int:
        return int(self.matrix.nnz)

    def items_of(self, u: int) -> np.ndarray:
        return self.matrix.indices[self.matrix.indptr[u] : self.matrix.indptr[u + 1]]

    def pairs(self) -> list[tuple[int, int]]:
        coo = self.matrix.tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))

    def to_graph(self) -> Graph:
        """Undirected graph with users ``0..U-1`` and items ``U..U+I-1``."""
        adj = sp.bmat([[None, self.matrix], [self.matrix.T, None]], format="csr")
        n = self.n_users + self.n_items
        return Graph(sp.csr_matrix(adj, shape=(n, n)), directed=False)

    @classmethod
    def from_graph(cls, g: Graph, n_users: int) -> "BipartiteGraph":
        """User-item block of a graph laid out as in :meth:`to_graph`."""
        block = g.adj[:n_users, n_users:]
        return cls(n_users, g.n_nodes - n_users, block)


# ---------------------------------------------------------------- operations


def symmetrize(g: Graph) -> Graph:
    """Undirected graph with ``A_ij = max(A'_ij, A'_ji)``."""
    return Graph(g.adj.maximum(g.adj.T), directed=False)


def degree(g: Graph, v: int, mode: DegreeMode = "out") -> int:
    if not 0 <= v < g.n_nodes:
        raise IndexError(f"node {v} out of range for {g.n_nodes} nodes")
    out_deg = int(g.adj.indptr[v + 1] - g.adj.indptr[v])
    if not g.directed:
        return out_deg
    in_deg = int(g.adj.getcol(v).nnz)
    if mode == "out":
        return out_deg
    if mode == "in":
        return in_deg
    if mode == "total":
        return in_deg + out_deg
    raise ValueError(f"unknown degree mode {mode!r}")


def induced_subgraph(g: Graph, nodes: np.ndarray) -> Graph:
    nodes = np.asarray(nodes, dtype=np.int64)
    return Graph(g.adj[nodes][:, nodes], directed=g.directed)


def largest_connected_component(g: Graph) -> tuple[Graph, np.ndarray]:
    """Largest (weakly) connected component and an old->new id map.

    The map holds ``-1`` for dropped nodes. Size ties go to the component
    containing the smallest node id.
    """
    if g.n_nodes == 0:
        raise ValueError("empty graph has no components")
    _, comp = connected_components(g.adj, directed=g.directed, connection="weak")
    sizes = np.bincount(comp)
    best = sizes.max()
    # components are numbered in order of their smallest member
    first_min = {}
    for node, c in enumerate(comp):
        first_min.setdefault(int(c), node)
    candidates = [c for c in range(len(sizes)) if sizes[c] == best]
    chosen = min(candidates, key=lambda c: first_min[c])
    nodes = np.flatnonzero(comp == chosen)
    remap = np.full(g.n_nodes, -1, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    return induced_subgraph(g, nodes), remap


# ---------------------------------------------------------------------- I/O


def load_edge_list(path: str | Path, directed: bool = False, n_nodes: int | None = None) -> Graph:
    """Parse a whitespace-separated ``src dst [weight]`` edge list.

    ``#`` lines are comments; a ``%nodes N`` line fixes the node count
    (an explicit ``n_nodes`` argument wins over both the header and the
    inferred ``max(id) + 1``).
    """
    path = Path(path)
    header_n: int | None = None
    src: list[int] = []
    dst: list[int] = []
    wts: list[float] = []
    lines: list[int] = []
    seen: dict[tuple[int, int], int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("%"):
                parts = line[1:].split()
                if len(parts) != 2 or parts[0] != "nodes":
                    raise GraphFormatError(f"unknown header {line!r}", lineno, path)
                try:
                    header_n = int(parts[1])
                except ValueError:
                    raise GraphFormatError(f"bad node count {parts[1]!r}", lineno, path) from None
                if header_n < 0:
                    raise GraphFormatError("node count must be non-negative", lineno, path)
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphFormatError(f"expected 'src dst [weight]', got {line!r}", lineno, path)
            try:
                a, b = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise GraphFormatError(f"cannot parse {line!r}", lineno, path) from None
            if a < 0 or b < 0:
                raise GraphFormatError(f"negative node id in {line!r}", lineno, path)
            if not (w > 0) or not np.isfinite(w):
                raise GraphFormatError(f"weight must be positive and finite, got {parts[2]}", lineno, path)
            key = (a, b) if directed else (min(a, b), max(a, b))
            if key in seen:
                raise GraphFormatError(f"duplicate edge {key} (first on line {seen[key]})", lineno, path)
            seen[key] = lineno
            src.append(a)
            dst.append(b)
            wts.append(w)
            lines.append(lineno)
    inferred = max(max(src, default=-1), max(dst, default=-1)) + 1
    n = n_nodes if n_nodes is not None else (header_n if header_n is not None else inferred)
    for a, b, ln in zip(src, dst, lines):
        if a >= n or b >= n:
            raise GraphFormatError(f"node id {max(a, b)} out of range for {n} nodes", ln, path)
    return Graph.from_edges(n, zip(src, dst, wts), directed=directed)


def write_edge_list(g: Graph, path: str | Path) -> None:
    """Write ``g`` so that :func:`load_edge_list` reproduces it exactly."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"%nodes {g.n_nodes}\n")
        for a, b, w in g.edges():
            if w == 1.0:
                fh.write(f"{a} {b}\n")
            else:
                fh.write(f"{a} {b} {w!r}\n")


def load_labels(path: str | Path, n_nodes: int | None = None) -> NodeLabels:
    """Read ``node,label`` CSV rows; nodes without a row are unlabeled."""
    path = Path(path)
    rows: list[tuple[int, int]] = []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].startswith("#"):
                continue
            if lineno == 1 and not rec[0].strip().lstrip("-").isdigit():
                continue  # header
            if len(rec) != 2:
                raise GraphFormatError("expected 'node,label'", lineno, path)
            try:
                rows.append((int(rec[0]), int(rec[1])))
            except ValueError:
                raise GraphFormatError(f"non-integer field in {rec}", lineno, path) from None
    n = n_nodes if n_nodes is not None else max((r[0] for r in rows), default=-1) + 1
    labels = np.full(n, -1, dtype=np.int64)
    for node, lab in rows:
        if not 0 <= node < n:
            raise GraphFormatError(f"node {node} out of range for {n} nodes", path=path)
        if lab < 0:
            raise GraphFormatError(f"negative label for node {node}", path=path)
        labels[node] = lab
    return NodeLabels.from_array(labels)


def write_labels(labels: NodeLabels, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "label"])
        for node, lab in enumerate(labels.labels):
            if lab >= 0:
                w.writerow([node, int(lab)])


def load_features(
    path: str | Path,
    n_nodes: int | None = None,
    fmt: Literal["auto", "dense", "triplets"] = "auto",
) -> np.ndarray | sp.csr_matrix:
    """Dense CSV (row i = node i) or ``node,feature_index,value`` triplets.

    ``auto`` treats the file as triplets when its first line is the
    ``node,feature_index,value`` header.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().strip().replace(" ", "")
    if fmt == "auto":
        fmt = "triplets" if first == "node,feature_index,value" else "dense"
    if fmt == "dense":
        x = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if n_nodes is not None and x.shape[0] != n_nodes:
            raise GraphFormatError(f"{x.shape[0]} feature rows for {n_nodes} nodes", path=path)
        if not np.all(np.isfinite(x)):
            raise GraphFormatError("non-finite feature value", path=path)
        return x
    data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1, comments="#")
    if data.size == 0:
        data = np.zeros((0, 3))
    rows, cols = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64)
    n = n_nodes if n_nodes is not None else int(rows.max(initial=-1)) + 1
    f = int(cols.max(initial=-1)) + 1
    if not np.all(np.isfinite(data[:, 2])):
        raise GraphFormatError("non-finite feature value", path=path)
    return sp.csr_matrix((data[:, 2], (rows, cols)), shape=(n, f))


def write_features(x: np.ndarray | sp.spmatrix, path: str | Path) -> None:
    path = Path(path)
    if sp.issparse(x):
        coo = sp.coo_matrix(x)
        order = np.lexsort((coo.col, coo.row))
        with path.open("w", encoding="utf-8") as fh:
            fh.write("node,feature_index,value\n")
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{int(r)},{int(c)},{float(v)!r}\n")
    else:
        np.savetxt(path, np.asarray(x), delimiter=",", fmt="%.17g")


def load_interactions(path: str | Path) -> tuple[list[tuple[int, int]], int, int]:
    """Read ``user<TAB>item`` lines; returns pairs and the inferred counts."""
    path = Path(path)
    pairs: list[tuple[int, int]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise GraphFormatError("expected 'user<TAB>item'", lineno, path)
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise GraphFormatError(f"cannot parse {line!r}", lineno, path) from None
    n_users = max((p[0] for p in pairs), default=-1) + 1
    n_items = max((p[1] for p in pairs), default=-1) + 1
    return pairs, n_users, n_items


def write_interactions(pairs: Iterable[tuple[int, int]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")
