"""Monte Carlo checks that node copying preserves SBM / ER edge marginals.

The checks work on the directed copied adjacency ``A' = C_zeta A_obs`` of a
symmetric observed graph and inspect its upper-triangle entries
``A'_ij, i < j``. Observed graphs carry no self-loops, so an entry whose
source copies its own column (``zeta^i = j``) reads ``A_jj = 0``; the
target for entry ``(i, j)`` is therefore ``beta_{c_i c_j} (1 - p(zeta^i = j))``.
All other entries should match the generating model exactly.

Marginal checks draw a fresh observed graph per trial. ``conditioned=True``
keeps one observed graph for all trials; that mode is a diagnostic and is
not what the preservation results are about.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from copygraph.copying import CopyingDistribution, build_label_uniform
from copygraph.graph import Graph
from copygraph.rng import derive_rng, ordered_map

Z_THRESHOLD = 4.0
MIN_EXPECTED_COUNT = 20


@dataclass(frozen=True)
class SBMParams:
    assignment: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.assignment, dtype=np.int64)
        b = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "assignment", c)
        object.__setattr__(self, "beta", b)
        k = b.shape[0]
        if b.shape != (k, k) or not np.allclose(b, b.T):
            raise ValueError("beta must be a symmetric K x K matrix")
        if np.any(b < 0) or np.any(b > 1):
            raise ValueError("beta entries must lie in [0, 1]")
        if c.min() < 0 or c.max() >= k:
            raise ValueError("block assignment out of range")
        if len(np.unique(c)) != k:
            raise ValueError("every block must be nonempty")

    @classmethod
    def planted(cls, sizes: list[int], p_in: float, p_out: float) -> "SBMParams":
        k = len(sizes)
        beta = np.full((k, k), p_out)
        np.fill_diagonal(beta, p_in)
        return cls(np.repeat(np.arange(k), sizes), beta)

    @property
    def n_nodes(self) -> int:
        return len(self.assignment)

    @property
    def n_blocks(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class ERParams:
    n_nodes: int
    theta: float

    def __post_init__(self) -> None:
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")

    def as_sbm(self) -> SBMParams:
        return SBMParams(np.zeros(self.n_nodes, dtype=np.int64), np.array([[self.theta]]))


def sample_sbm(params: SBMParams, rng: np.random.Generator) -> Graph:
    """Undirected SBM draw; pair ``i < j`` present w.p. ``beta[c_i, c_j]``."""
    c = params.assignment
    n = len(c)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < params.beta[c[iu], c[ju]]
    r, s = iu[keep], ju[keep]
    adj = sp.coo_matrix((np.ones(2 * r.size), (np.concatenate([r, s]), np.concatenate([s, r]))), shape=(n, n))
    return Graph(adj.tocsr(), directed=False)


def sample_er(params: ERParams, rng: np.random.Generator) -> Graph:
    return sample_sbm(params.as_sbm(), rng)


def within_class_distribution(labels: np.ndarray) -> CopyingDistribution:
    """Copy uniformly within the true block."""
    return build_label_uniform(np.asarray(labels))


def cross_class_distribution(labels: np.ndarray) -> CopyingDistribution:
    """Copy uniformly from nodes of a *different* block (negative control)."""
    labels = np.asarray(labels)
    n = len(labels)
    rows = []
    for k in labels:
        others = np.flatnonzero(labels != k)
        if others.size == 0:
            raise ValueError("cross-class copying needs at least two blocks")
        rows.append(others)
    lengths = np.array([len(r) for r in rows])
    probs = sp.csr_matrix(
        (np.repeat(1.0 / lengths, lengths), np.concatenate(rows), np.concatenate([[0], np.cumsum(lengths)])),
        shape=(n, n),
    )
    return CopyingDistribution(probs, kind="custom")


def uniform_distribution(n: int) -> CopyingDistribution:
    """Every node copies any node (itself included) with probability ``1/n``."""
    return CopyingDistribution(sp.csr_matrix(np.full((n, n), 1.0 / n)), kind="custom")


def skewed_distribution(n: int, rng: np.random.Generator, exponent: float = 1.5, support: int | None = None) -> CopyingDistribution:
    """Power-law rows over a random ordering of nodes, different for each row."""
    support = n if support is None else min(support, n)
    weights = 1.0 / np.arange(1, support + 1) ** exponent
    weights /= weights.sum()
    rows = [rng.permutation(n)[:support] for _ in range(n)]
    indptr = np.arange(n + 1) * support
    probs = sp.csr_matrix((np.tile(weights, n), np.concatenate(rows), indptr), shape=(n, n))
    return CopyingDistribution(probs, kind="custom")


@dataclass
class CellResult:
    blocks: tuple[int, int]
    n_entries: int
    beta: float
    target: float
    frequency: float
    std_error: float
    z: float
    passed: bool


@dataclass
class CovarianceResult:
    case: str
    n_pairs: int
    covariance: float
    std_error: float
    z: float
    passed: bool


@dataclass
class VerificationReport:
    cells: list[CellResult]
    covariances: list[CovarianceResult]
    n_trials: int
    samples_per_trial: int
    conditioned: bool
    z_threshold: float = Z_THRESHOLD
    observed_frequencies: list[float] | None = None
    false_alarm_bound: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        n_tests = len(self.cells) + len(self.covariances)
        self.false_alarm_bound = float(n_tests * 2 * norm.sf(self.z_threshold))
        self.passed = all(c.passed for c in self.cells) and all(c.passed for c in self.covariances)

    @property
    def max_abs_z(self) -> float:
        zs = [abs(c.z) for c in self.cells] + [abs(c.z) for c in self.covariances]
        return max(zs) if zs else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _z(diff: float, se: float) -> float:
    if se > 0:
        return diff / se
    return 0.0 if abs(diff) < 1e-12 else math.copysign(math.inf, diff)


def _trial_se(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def _verify(
    params: SBMParams,
    dist_for: Callable[[int], CopyingDistribution],
    n_trials: int,
    samples_per_trial: int,
    seed: int,
    conditioned: bool,
    n_cov_pairs: int,
    workers: int,
    stream: str,
) -> VerificationReport:
    c = params.assignment
    n, k = params.n_nodes, params.n_blocks
    iu, ju = np.triu_indices(n, k=1)
    cell_of = np.minimum(c[iu], c[ju]) * k + np.maximum(c[iu], c[ju])
    cell_ids = [(a, b) for a in range(k) for b in range(a, k)]
    beta_ij = params.beta[c[iu], c[ju]]

    pair_rng = derive_rng(seed, stream, "pairs")
    m = iu.size
    # case 1: distinct sources; case 2: shared source, distinct targets
    e1 = pair_rng.integers(0, m, size=(n_cov_pairs, 2))
    e1 = e1[(iu[e1[:, 0]] != iu[e1[:, 1]])]
    src2 = pair_rng.integers(0, n - 2, size=n_cov_pairs)
    rows2, cols2a, cols2b = [], [], []
    for s in src2:
        a, b = pair_rng.choice(np.arange(s + 1, n), size=2, replace=False)
        rows2.append(s)
        cols2a.append(a)
        cols2b.append(b)
    rows2, cols2a, cols2b = map(np.asarray, (rows2, cols2a, cols2b))

    fixed_obs = sample_sbm(params, derive_rng(seed, stream, "observed")) if conditioned else None

    def trial(t: int):
        rng = derive_rng(seed, stream, "trial", t)
        g = fixed_obs if conditioned else sample_sbm(params, rng)
        dist = dist_for(t)
        p_self = np.asarray(dist.probs[iu, ju]).ravel()
        target_ij = beta_ij * (1.0 - p_self)
        a_obs = g.adj.toarray()
        cell_freq = np.zeros(len(cell_ids))
        cov1 = cov2 = 0.0
        for _ in range(samples_per_trial):
            zeta = dist.draw(rng)
            ap = a_obs[zeta]
            x = ap[iu, ju]
            sums = np.bincount(cell_of, weights=x, minlength=k * k)
            cell_freq += np.array([sums[a * k + b] for a, b in cell_ids])
            x1, x2 = x[e1[:, 0]], x[e1[:, 1]]
            cov1 += float(np.mean(x1 * x2 - target_ij[e1[:, 0]] * target_ij[e1[:, 1]]))
            y1, y2 = ap[rows2, cols2a], ap[rows2, cols2b]
            tt1 = params.beta[c[rows2], c[cols2a]] * (1 - np.asarray(dist.probs[rows2, cols2a]).ravel())
            tt2 = params.beta[c[rows2], c[cols2b]] * (1 - np.asarray(dist.probs[rows2, cols2b]).ravel())
            cov2 += float(np.mean(y1 * y2 - tt1 * tt2))
        tsums = np.bincount(cell_of, weights=target_ij, minlength=k * k)
        targets = np.array([tsums[a * k + b] for a, b in cell_ids])
        obs_freq = None
        if conditioned:
            xo = a_obs[iu, ju]
            osums = np.bincount(cell_of, weights=xo, minlength=k * k)
            obs_freq = np.array([osums[a * k + b] for a, b in cell_ids])
        return cell_freq / samples_per_trial, targets, cov1 / samples_per_trial, cov2 / samples_per_trial, obs_freq

    results = ordered_map(trial, range(n_trials), workers)
    counts = np.bincount(cell_of, minlength=k * k)
    sizes = np.array([counts[a * k + b] for a, b in cell_ids])
    freqs = np.stack([r[0] for r in results]) / sizes
    targets = np.stack([r[1] for r in results]) / sizes

    cells = []
    for idx, (a, b) in enumerate(cell_ids):
        f_t = freqs[:, idx] - targets[:, idx]
        target = float(targets[:, idx].mean())
        expected = target * sizes[idx] * n_trials * samples_per_trial
        expected_miss = (1 - target) * sizes[idx] * n_trials * samples_per_trial
        if 0 < target < 1 and min(expected, expected_miss) < MIN_EXPECTED_COUNT:
            raise ValueError(
                f"cell {(a, b)} expects only {min(expected, expected_miss):.1f} events; "
                f"increase trials or samples"
            )
        se = _trial_se(f_t)
        z = _z(float(f_t.mean()), se)
        cells.append(
            CellResult(
                blocks=(a, b),
                n_entries=int(sizes[idx]),
                beta=float(params.beta[a, b]),
                target=target,
                frequency=float(freqs[:, idx].mean()),
                std_error=se,
                z=float(z),
                passed=bool(abs(z) < Z_THRESHOLD),
            )
        )

    covs = []
    for case, col, npairs in (("distinct-source", 2, len(e1)), ("shared-source", 3, len(rows2))):
        vals = np.array([r[col] for r in results])
        se = _trial_se(vals)
        z = _z(float(vals.mean()), se)
        covs.append(CovarianceResult(case, int(npairs), float(vals.mean()), se, float(z), bool(abs(z) < Z_THRESHOLD)))

    observed = None
    if conditioned:
        observed = (results[0][4] / sizes).tolist()
    return VerificationReport(cells, covs, n_trials, samples_per_trial, conditioned, observed_frequencies=observed)


def verify_sbm_marginal(
    params: SBMParams,
    n_trials: int,
    samples_per_trial: int = 1,
    seed: int = 0,
    dist: CopyingDistribution | None = None,
    conditioned: bool = False,
    n_cov_pairs: int = 2000,
    workers: int = 1,
) -> VerificationReport:
    """Check that within-class copying keeps every block-pair frequency.

    ``dist`` defaults to :func:`within_class_distribution` on the true
    blocks; pass another distribution to run controls.
    """
    d = dist if dist is not None else within_class_distribution(params.assignment)
    return _verify(params, lambda t: d, n_trials, samples_per_trial, seed, conditioned, n_cov_pairs, workers, "sbm")


def verify_er_marginal(
    params: ERParams,
    dist: CopyingDistribution,
    n_trials: int,
    samples_per_trial: int = 1,
    seed: int = 0,
    conditioned: bool = False,
    n_cov_pairs: int = 2000,
    workers: int = 1,
) -> VerificationReport:
    """Check that *any* copying distribution keeps the ER edge probability."""
    if dist.n_nodes != params.n_nodes:
        raise ValueError("distribution size does not match the ER graph")
    return _verify(params.as_sbm(), lambda t: dist, n_trials, samples_per_trial, seed, conditioned, n_cov_pairs, workers, "er")
