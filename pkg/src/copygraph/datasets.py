"""Dataset loaders (Cora in its common distributions) and synthetic generators."""

from __future__ import annotations

import logging
import os
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from copygraph.graph import Graph, NodeLabels

logger = logging.getLogger(__name__)

CORA_ENV_VAR = "COPYGRAPH_CORA_DIR"


class DatasetNotFoundError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class NodeDataset:
    graph: Graph
    features: sp.csr_matrix
    labels: NodeLabels
    name: str = ""

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def restrict(self, nodes: np.ndarray) -> "NodeDataset":
        nodes = np.asarray(nodes, dtype=np.int64)
        adj = self.graph.adj[nodes][:, nodes]
        lab = self.labels.labels[nodes]
        return NodeDataset(Graph(adj, directed=self.graph.directed), self.features[nodes], NodeLabels(lab, self.labels.n_classes), self.name)


def cora_search_paths() -> list[Path]:
    paths = []
    env = os.environ.get(CORA_ENV_VAR)
    if env:
        paths.append(Path(env))
    paths += [Path.cwd() / "data" / "cora", Path(__file__).resolve().parents[2] / "data" / "cora", Path.home() / ".copygraph" / "cora"]
    return list(dict.fromkeys(paths))


def find_cora() -> Path:
    for p in cora_search_paths():
        if _cora_format(p) is not None:
            return p
    raise DatasetNotFoundError(
        "Cora not found; set " + CORA_ENV_VAR + " to a directory holding cora.content/cora.cites, "
        "cora.npz, or the ind.cora.* files. Searched: " + ", ".join(str(p) for p in cora_search_paths())
    )


def _cora_format(root: Path) -> str | None:
    if root.is_file() and root.suffix == ".npz":
        return "npz"
    if not root.is_dir():
        return None
    if (root / "cora.content").exists() and (root / "cora.cites").exists():
        return "linqs"
    if (root / "cora.npz").exists():
        return "npz"
    if (root / "ind.cora.graph").exists():
        return "planetoid"
    return None


def _undirected_from_pairs(n: int, src: np.ndarray, dst: np.ndarray) -> Graph:
    keep = src != dst
    a = sp.coo_matrix((np.ones(keep.sum()), (src[keep], dst[keep])), shape=(n, n)).tocsr()
    a = a.maximum(a.T).tocsr()
    a.data[:] = 1.0
    return Graph(a, directed=False)


def _load_linqs(root: Path) -> NodeDataset:
    ids, rows, classes = [], [], []
    with (root / "cora.content").open(encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            classes.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    names = sorted(set(classes))
    labels = np.array([names.index(c) for c in classes], dtype=np.int64)
    src, dst = [], []
    with (root / "cora.cites").open(encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2:
                continue
            if parts[0] in index and parts[1] in index:
                src.append(index[parts[0]])
                dst.append(index[parts[1]])
    n = len(ids)
    g = _undirected_from_pairs(n, np.array(src), np.array(dst))
    return NodeDataset(g, sp.csr_matrix(np.vstack(rows)), NodeLabels(labels, len(names)), "cora")


def _load_npz(path: Path) -> NodeDataset:
    with np.load(path, allow_pickle=True) as f:
        adj = sp.csr_matrix((f["adj_data"], f["adj_indices"], f["adj_indptr"]), shape=tuple(f["adj_shape"]))
        if "attr_data" in f:
            x = sp.csr_matrix((f["attr_data"], f["attr_indices"], f["attr_indptr"]), shape=tuple(f["attr_shape"]))
        else:
            x = sp.csr_matrix(f["attr_matrix"])
        labels = np.asarray(f["labels"], dtype=np.int64)
    coo = adj.tocoo()
    g = _undirected_from_pairs(adj.shape[0], coo.row, coo.col)
    return NodeDataset(g, x, NodeLabels(labels, int(labels.max()) + 1), "cora")


def _load_planetoid(root: Path) -> NodeDataset:
    def obj(name: str):
        with (root / f"ind.cora.{name}").open("rb") as fh:
            return pickle.load(fh, encoding="latin1")

    tx, allx = obj("tx"), obj("allx")
    ally, ty = obj("ally"), obj("ty")
    graph = obj("graph")
    test_idx = np.loadtxt(root / "ind.cora.test.index", dtype=np.int64)
    feats = sp.vstack([sp.csr_matrix(allx), sp.csr_matrix(tx)]).tolil()
    lab = np.vstack([ally, ty])
    order = np.sort(test_idx)
    feats[test_idx, :] = feats[order, :]
    lab[test_idx, :] = lab[order, :]
    n = feats.shape[0]
    src = np.array([s for s, nb in graph.items() for _ in nb], dtype=np.int64)
    dst = np.array([t for _, nb in graph.items() for t in nb], dtype=np.int64)
    g = _undirected_from_pairs(n, src, dst)
    labels = np.argmax(lab, axis=1).astype(np.int64)
    return NodeDataset(g, sp.csr_matrix(feats), NodeLabels(labels, lab.shape[1]), "cora")


def load_cora(root: str | Path | None = None) -> NodeDataset:
    """Cora citation graph as an undirected, unweighted, loop-free graph."""
    path = Path(root) if root is not None else find_cora()
    fmt = _cora_format(path)
    if fmt is None:
        raise DatasetNotFoundError(f"no Cora files under {path}")
    if fmt == "linqs":
        return _load_linqs(path)
    if fmt == "npz":
        return _load_npz(path if path.is_file() else path / "cora.npz")
    return _load_planetoid(path)


def normalize_features(x: np.ndarray | sp.spmatrix) -> sp.csr_matrix:
    """Row-normalize to unit L1 norm; all-zero rows stay zero."""
    x = sp.csr_matrix(x, dtype=np.float64)
    s = np.asarray(abs(x).sum(axis=1)).ravel()
    inv = np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)
    return sp.csr_matrix(sp.diags(inv) @ x)


# ------------------------------------------------------------------ synthetic


def planted_partition(
    sizes: list[int],
    p_in: float,
    p_out: float,
    n_features: int,
    rng: np.random.Generator,
    feature_signal: float = 0.6,
    words_per_node: int = 10,
) -> NodeDataset:
    """SBM graph with bag-of-words features.

    Each class owns a block of ``n_features // K`` words. A node draws
    ``words_per_node`` words, each from its own class block with
    probability ``feature_signal`` and uniformly from all words otherwise.
    """
    from copygraph.theory import SBMParams, sample_sbm

    params = SBMParams.planted(sizes, p_in, p_out)
    g = sample_sbm(params, rng)
    labels = params.assignment
    k = len(sizes)
    block = n_features // k
    n = len(labels)
    own = rng.random((n, words_per_node)) < feature_signal
    in_block = labels[:, None] * block + rng.integers(0, block, size=(n, words_per_node))
    anywhere = rng.integers(0, n_features, size=(n, words_per_node))
    words = np.where(own, in_block, anywhere)
    x = sp.coo_matrix((np.ones(words.size), (np.repeat(np.arange(n), words_per_node), words.ravel())), shape=(n, n_features)).tocsr()
    x.data[:] = 1.0
    return NodeDataset(g, x, NodeLabels(labels, k), "planted")


def remove_node_edges(g: Graph, nodes: np.ndarray) -> Graph:
    """Drop every edge incident to ``nodes``."""
    mask = np.ones(g.n_nodes)
    mask[np.asarray(nodes, dtype=np.int64)] = 0.0
    d = sp.diags(mask)
    return Graph(sp.csr_matrix(d @ g.adj @ d), directed=g.directed)
