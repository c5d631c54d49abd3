"""Structural statistics for comparing sampled graphs with an observed one.

All statistics look at the undirected simple structure: weights, arc
direction and self-loops are ignored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from copygraph.graph import Graph, NodeLabels

logger = logging.getLogger(__name__)

ALPHA_CAP = 30.0


def simple_structure(g: Graph) -> sp.csr_matrix:
    """Symmetric binary adjacency without self-loops."""
    a = g.adj if not g.directed else g.adj.maximum(g.adj.T)
    a = sp.csr_matrix(a, copy=True)
    a.setdiag(0)
    a.eliminate_zeros()
    a.data[:] = 1.0
    return a


def _degrees(a: sp.csr_matrix) -> np.ndarray:
    return np.diff(a.indptr).astype(np.int64)


@dataclass(frozen=True)
class GraphStatistics:
    avg_degree: float
    max_degree: float
    cross_community: float | None
    claw_fraction: float | None
    edge_entropy_relative: float | None
    edge_entropy_verbatim: float | None
    n_nodes: float
    n_edges: float

    def as_dict(self) -> dict:
        return asdict(self)


def degree_stats(g: Graph) -> tuple[float, int]:
    if g.n_nodes == 0:
        raise ValueError("degree statistics need a nonempty graph")
    d = _degrees(simple_structure(g))
    return float(d.mean()), int(d.max())


def cross_community_fraction(g: Graph, labels: NodeLabels | np.ndarray) -> float:
    lab = labels.labels if isinstance(labels, NodeLabels) else np.asarray(labels)
    a = sp.triu(simple_structure(g), k=1).tocoo()
    if a.nnz == 0:
        raise ValueError("graph has no edges")
    li, lj = lab[a.row], lab[a.col]
    if np.any(li < 0) or np.any(lj < 0):
        raise ValueError("edge endpoint without a label")
    return float(np.mean(li != lj))


def claw_fraction(g: Graph) -> float:
    """``sum_v C(d(v), 3) / C(|E|, 3)`` on the undirected simple graph."""
    a = simple_structure(g)
    m = a.nnz // 2
    if m < 3:
        raise ValueError(f"claw fraction needs at least 3 edges, got {m}")
    claws = sum(math.comb(int(d), 3) for d in _degrees(a) if d >= 3)
    return claws / math.comb(m, 3)


def edge_distribution_entropy(g: Graph) -> tuple[float, float]:
    """Entropy of the degree distribution over ``log N``.

    Returns ``(relative, verbatim)``. ``relative`` normalizes degrees by
    ``sum_v d(v) = 2|E|`` so that it is a proper distribution and lies in
    ``[0, 1]``; ``verbatim`` divides by ``|E|`` instead.
    """
    a = simple_structure(g)
    m = a.nnz // 2
    n = g.n_nodes
    if m == 0:
        raise ValueError("edge distribution entropy needs at least one edge")
    if n < 2:
        raise ValueError("edge distribution entropy needs at least two nodes")
    d = _degrees(a)
    d = d[d > 0].astype(float)
    p = d / d.sum()
    q = d / m
    rel = float(-(p * np.log(p)).sum() / math.log(n))
    verb = float(-(q * np.log(q)).sum() / math.log(n))
    return rel, verb


def summarize(g: Graph, labels: NodeLabels | np.ndarray | None = None) -> GraphStatistics:
    avg, mx = degree_stats(g)
    a = simple_structure(g)
    m = a.nnz // 2
    cross = cross_community_fraction(g, labels) if labels is not None and m > 0 else None
    claw = claw_fraction(g) if m >= 3 else None
    ent_rel, ent_verb = edge_distribution_entropy(g) if m > 0 and g.n_nodes > 1 else (None, None)
    return GraphStatistics(
        avg_degree=avg,
        max_degree=mx,
        cross_community=cross,
        claw_fraction=claw,
        edge_entropy_relative=ent_rel,
        edge_entropy_verbatim=ent_verb,
        n_nodes=g.n_nodes,
        n_edges=m,
    )


def mean_statistics(stats: list[GraphStatistics]) -> GraphStatistics:
    """Field-wise mean; a field is ``None`` if any input lacks it."""
    if not stats:
        raise ValueError("no statistics to average")
    out = {}
    for f in fields(GraphStatistics):
        vals = [getattr(s, f.name) for s in stats]
        out[f.name] = None if any(v is None for v in vals) else float(np.mean(vals))
    return GraphStatistics(**out)


# ------------------------------------------------------ calibration baseline


@dataclass(frozen=True)
class CalibrationModel:
    alpha: float
    beta: float
    converged: bool = True
    n_iter: int = 0

    def __call__(self, p_model: np.ndarray) -> np.ndarray:
        return expit(self.alpha * np.asarray(p_model) + self.beta)


def _pair_values(p_model: np.ndarray | sp.spmatrix, g_obs: Graph) -> tuple[np.ndarray, np.ndarray]:
    n = g_obs.n_nodes
    adj = simple_structure(g_obs)
    if sp.issparse(p_model):
        p = sp.triu(p_model, k=1).tocoo()
        y = np.asarray(adj[p.row, p.col]).ravel()
        return p.data.astype(float), y
    p = np.asarray(p_model, dtype=float)
    if p.shape != (n, n):
        raise ValueError(f"probability matrix shape {p.shape} does not match {n} nodes")
    iu = np.triu_indices(n, k=1)
    y = adj.toarray()[iu]
    return p[iu], y


def fit_calibration(
    p_model: np.ndarray | sp.spmatrix,
    g_obs: Graph,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> CalibrationModel:
    """Logistic fit ``A_ij ~ Bernoulli(sigmoid(alpha p_ij + beta))``.

    Maximizes the mean Bernoulli log-likelihood over node pairs ``i < j``
    (for sparse input, only over the stored pairs) with damped Newton
    ascent from ``(0, 0)`` until the gradient norm drops below ``tol``.
    ``alpha`` is confined to ``[-30, 30]``. Perfectly separable data have
    no finite optimum and are reported as ``converged=False``.
    """
    x, y = _pair_values(p_model, g_obs)
    if x.size == 0:
        raise ValueError("no node pairs to calibrate on")
    pos, neg = x[y > 0], x[y == 0]
    separable = pos.size > 0 and neg.size > 0 and (pos.min() > neg.max() or pos.max() < neg.min())
    if separable:
        logger.warning("calibration data are perfectly separable; the maximum-likelihood slope is infinite")

    def loglik(theta: np.ndarray) -> float:
        z = theta[0] * x + theta[1]
        return float(np.mean(y * z - np.logaddexp(0.0, z)))

    theta = np.zeros(2)
    capped = False
    for it in range(1, max_iter + 1):
        s = expit(theta[0] * x + theta[1])
        r = y - s
        grad = np.array([np.mean(r * x), np.mean(r)])
        free = np.array([not capped, True])
        if np.linalg.norm(grad[free]) < tol:
            return CalibrationModel(float(theta[0]), float(theta[1]), converged=not (capped or separable), n_iter=it)
        w = s * (1 - s)
        hess = np.array([[np.mean(w * x * x), np.mean(w * x)], [np.mean(w * x), np.mean(w)]])
        step = np.zeros(2)
        step[free] = np.linalg.pinv(hess[np.ix_(free, free)]) @ grad[free]
        base = loglik(theta)
        t = 1.0
        while t > 1e-10:
            cand = theta + t * step
            cand[0] = np.clip(cand[0], -ALPHA_CAP, ALPHA_CAP)
            if loglik(cand) >= base:
                break
            t *= 0.5
        theta = cand
        if abs(theta[0]) >= ALPHA_CAP:
            capped = True
    logger.warning("calibration did not converge in %d iterations", max_iter)
    return CalibrationModel(float(theta[0]), float(theta[1]), converged=False, n_iter=max_iter)


def calibrate_and_correct(p_cal: np.ndarray, target_edge_count: float) -> np.ndarray:
    """Rescale so the expected number of undirected edges is the target.

    Only the strict upper triangle counts toward the sum; entries pushed
    above 1 are clipped (which lowers the expectation, and is logged).
    """
    p = np.asarray(p_cal, dtype=float)
    total = float(np.triu(p, k=1).sum())
    if total <= 0:
        raise ValueError("probability matrix sums to zero")
    out = p * (target_edge_count / total)
    over = out > 1.0
    if np.any(np.triu(over, k=1)):
        logger.info("clipping %d corrected probabilities to 1", int(np.triu(over, k=1).sum()))
        out = np.minimum(out, 1.0)
    return out


def sample_bernoulli_graph(p: np.ndarray, rng: np.random.Generator) -> Graph:
    """Undirected graph with each pair ``i < j`` present w.p. ``p[i, j]``."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p[iu, ju]
    r, c = iu[keep], ju[keep]
    adj = sp.coo_matrix((np.ones(2 * r.size), (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(n, n))
    return Graph(adj.tocsr(), directed=False)
