"""Fuzzy simplicial set construction and embedding-kernel fitting."""
import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares

from .exceptions import DataError, DimensionError, ParameterError

logger = logging.getLogger(__name__)

PRUNE_THRESHOLD = 1e-8
SIGMA_BISECTION_ITERS = 64


@dataclass(frozen=True)
class SmoothingParams:
    rho: np.ndarray
    sigma: np.ndarray
    # rows whose sigma was clamped or defaulted rather than solved
    degenerate: np.ndarray


@dataclass(frozen=True)
class KernelParams:
    a: float
    b: float
    min_dist: float = 0.1
    spread: float = 1.0

    def q(self, dist_sq):
        """Low-dimensional membership ``(1 + a * d^(2b))^-1`` from squared distances."""
        return 1.0 / (1.0 + self.a * np.power(dist_sq, self.b))


class FuzzyGraph:
    """Symmetric weighted graph stored once per unordered pair (``head < tail``)."""

    def __init__(self, n_points, heads, tails, weights):
        heads = np.asarray(heads, dtype=np.int64)
        tails = np.asarray(tails, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (heads.shape == tails.shape == weights.shape) or heads.ndim != 1:
            raise DimensionError("heads, tails and weights must be 1-D and equal length")
        if heads.size and (np.any(heads >= tails) or heads.min() < 0 or tails.max() >= n_points):
            raise DataError("edges must satisfy 0 <= head < tail < n_points")
        if np.any(weights <= 0) or np.any(weights > 1):
            raise DataError("edge weights must lie in (0, 1]")
        order = np.lexsort((tails, heads))
        self.n_points = int(n_points)
        self.heads = heads[order]
        self.tails = tails[order]
        self.weights = weights[order]

    @property
    def n_edges(self):
        return self.heads.size

    def to_sparse(self):
        """Symmetric CSR matrix holding both orientations."""
        rows = np.concatenate([self.heads, self.tails])
        cols = np.concatenate([self.tails, self.heads])
        vals = np.concatenate([self.weights, self.weights])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_points, self.n_points))

    def to_dense(self):
        return self.to_sparse().toarray()

    def __repr__(self):
        return f"FuzzyGraph(n_points={self.n_points}, n_edges={self.n_edges})"


def smooth_knn_dist(graph, target=None):
    """Solve each point's bandwidth so its smoothed neighbour weights sum to ``target``.

    ``rho`` is the nearest-neighbour distance. ``sigma`` is found by bisection on
    ``sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = target`` (default ``log2(k)``)
    inside ``[1e-3, 1e3] * mean_i`` where ``mean_i`` is the row's mean distance.
    Rows whose solution lies below the bracket are clamped to its lower end;
    rows with all-zero distances get ``sigma = 1``. Both are flagged.
    """
    dist = graph.distances
    n, k = dist.shape
    if target is None:
        target = np.log2(k)
    if target <= 0:
        raise ParameterError("calibration target must be positive")
    rho = dist[:, 0].copy()
    gaps = np.maximum(dist - rho[:, None], 0.0)
    mean_d = dist.mean(axis=1)

    zero_rows = mean_d <= 0.0
    lo = 1e-3 * mean_d
    hi = 1e3 * mean_d
    lo[zero_rows] = hi[zero_rows] = 1.0

    def total(sig):
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(-gaps / sig[:, None]).sum(axis=1)

    below = total(lo) >= target  # even the tightest bandwidth overshoots
    a, b = lo.copy(), hi.copy()
    sigma = 0.5 * (a + b)
    for _ in range(SIGMA_BISECTION_ITERS):
        sigma = 0.5 * (a + b)
        s = total(sigma)
        if np.all(np.abs(s - target)[~below & ~zero_rows] < 1e-12):
            break
        high = s > target
        b = np.where(high, sigma, b)
        a = np.where(high, a, sigma)
    sigma = np.where(below, lo, sigma)
    sigma[zero_rows] = 1.0
    degenerate = below | zero_rows
    if degenerate.any():
        logger.debug("%d rows with clamped bandwidth", int(degenerate.sum()))
    return SmoothingParams(rho, sigma, degenerate)


def calibration_sums(graph, params):
    gaps = np.maximum(graph.distances - params.rho[:, None], 0.0)
    return np.exp(-gaps / params.sigma[:, None]).sum(axis=1)


def directed_membership(graph, params):
    """Sparse N x N matrix of one-directional memberships ``p_{j|i}``."""
    gaps = np.maximum(graph.distances - params.rho[:, None], 0.0)
    vals = np.exp(-gaps / params.sigma[:, None])
    n, k = graph.indices.shape
    rows = np.repeat(np.arange(n), k)
    return sp.csr_matrix((vals.ravel(), (rows, graph.indices.ravel())), shape=(n, n))


def symmetrize(directed, prune=PRUNE_THRESHOLD):
    """Probabilistic union ``P + P^T - P * P^T`` as a :class:`FuzzyGraph`."""
    P = sp.csr_matrix(directed, dtype=np.float64)
    if P.shape[0] != P.shape[1]:
        raise DimensionError("membership matrix must be square")
    P.setdiag(0.0)
    P.eliminate_zeros()
    Pt = P.T.tocsr()
    union = (P + Pt - P.multiply(Pt)).tocoo()
    keep = (union.row < union.col) & (union.data >= prune)
    weights = np.minimum(union.data[keep], 1.0)
    return FuzzyGraph(P.shape[0], union.row[keep], union.col[keep], weights)


def fuzzy_simplicial_set(graph, target=None):
    params = smooth_knn_dist(graph, target)
    return symmetrize(directed_membership(graph, params)), params


def _target_curve(r, min_dist, spread):
    return np.where(r <= min_dist, 1.0, np.exp(-(r - min_dist) / spread))


def fit_kernel_params(min_dist=0.1, spread=1.0, n_samples=300, max_iter=200):
    """Least-squares fit of ``(1 + a r^(2b))^-1`` to the offset-exponential target.

    The target is 1 up to ``min_dist`` and ``exp(-(r - min_dist)/spread)``
    beyond, sampled at ``n_samples`` points on ``[0, 3 * spread]``.
    """
    if min_dist < 0 or spread <= 0:
        raise ParameterError("need min_dist >= 0 and spread > 0")
    if min_dist > spread:
        raise ParameterError("min_dist must not exceed spread")
    r = np.linspace(0.0, 3.0 * spread, n_samples)
    y = _target_curve(r, min_dist, spread)

    def resid(theta):
        a, b = theta
        return 1.0 / (1.0 + a * r ** (2.0 * b)) - y

    def jac(theta):
        a, b = theta
        r2b = np.where(r > 0, r ** (2.0 * b), 0.0)
        log_r = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
        denom = (1.0 + a * r2b) ** 2
        return np.column_stack([-r2b / denom, -a * r2b * 2.0 * log_r / denom])

    fit = least_squares(resid, x0=[1.0, 1.0], jac=jac, method="lm", max_nfev=max_iter)
    a, b = fit.x
    mse = float(np.mean(fit.fun**2))
    if not fit.success or a <= 0 or b <= 0:
        raise ParameterError(
            f"kernel fit did not converge (status={fit.status}, mean squared residual={mse:.3g})"
        )
    return KernelParams(float(a), float(b), float(min_dist), float(spread))


def kernel_fit_residual(kernel, n_samples=300):
    """Mean squared gap between the fitted kernel and its target curve."""
    r = np.linspace(0.0, 3.0 * kernel.spread, n_samples)
    y = _target_curve(r, kernel.min_dist, kernel.spread)
    return float(np.mean((kernel.q(r**2) - y) ** 2))


def write_fuzzy_csv(graph, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "p_ij"])
        for i, j, w in zip(graph.heads, graph.tails, graph.weights):
            writer.writerow([int(i), int(j), repr(float(w))])


def read_fuzzy_csv(path, n_points=None):
    heads, tails, weights = [], [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (lineno == 1 and rec[0].strip() == "i"):
                continue
            if len(rec) != 3:
                raise DataError(f"line {lineno}: expected 3 fields, got {len(rec)}")
            try:
                heads.append(int(rec[0]))
                tails.append(int(rec[1]))
                weights.append(float(rec[2]))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
    if n_points is None:
        n_points = max(max(heads, default=-1), max(tails, default=-1)) + 1
    return FuzzyGraph(n_points, heads, tails, weights)
