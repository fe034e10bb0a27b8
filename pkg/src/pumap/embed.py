"""Non-parametric UMAP: SGD directly over embedding coordinates."""
import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_data, check_random_state, derive_seeds
from .exceptions import DimensionError, NumericError, ParameterError
from .fuzzy import FuzzyGraph, KernelParams, fit_kernel_params, fuzzy_simplicial_set
from .knn import NeighborGraph, nearest_neighbors

logger = logging.getLogger(__name__)

GRAD_CLIP = 4.0
Q_CLAMP = 1e-12


@dataclass
class Embedding:
    coords: np.ndarray
    kernel: KernelParams

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] < 1:
            raise DimensionError(f"embedding must be N x d with d >= 1, got {self.coords.shape}")

    @property
    def n_points(self):
        return self.coords.shape[0]

    @property
    def dim(self):
        return self.coords.shape[1]


@dataclass
class OptimizerSchedule:
    n_epochs: int | None = None
    initial_lr: float = 1.0
    negative_sample_rate: int = 5
    seed: int = 0

    def resolve_epochs(self, n_points):
        if self.n_epochs is not None:
            return int(self.n_epochs)
        return 500 if n_points <= 10_000 else 200

    def learning_rate(self, epoch, n_epochs):
        return self.initial_lr * (1.0 - epoch / n_epochs)


@dataclass
class OptimizeResult:
    embedding: Embedding
    loss_history: np.ndarray = field(default_factory=lambda: np.empty(0))


def pca_projection(data, dim):
    """Centred projection onto the top ``dim`` principal axes, plus singular values."""
    centred = data - data.mean(axis=0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    return centred @ vt[:dim].T, s[:dim]


def init_embedding(data, dim=2, mode="pca", seed=None):
    """Starting layout: PCA scaled to 0.1 standard deviation per axis, or uniform on [-10, 10]^d."""
    data = np.asarray(data, dtype=np.float64)
    rng = check_random_state(seed)
    if mode == "pca":
        if dim > data.shape[1]:
            raise ParameterError(f"PCA init needs dim <= n_features ({data.shape[1]})")
        proj, s = pca_projection(data, dim)
        if s.size < dim or s[-1] <= 1e-10 * max(s[0], 1e-300):
            warnings.warn("data are rank deficient; falling back to random init", RuntimeWarning)
            return rng.uniform(-10.0, 10.0, size=(data.shape[0], dim))
        return 0.1 * proj / proj.std(axis=0)
    if mode == "random":
        return rng.uniform(-10.0, 10.0, size=(data.shape[0], dim))
    raise ParameterError(f"unknown init mode {mode!r}")


def embedding_q(dist_sq, kernel):
    """``(1 + a * d^(2b))^-1`` given squared distance ``d^2``."""
    return kernel.q(np.asarray(dist_sq, dtype=np.float64))


def attractive_gradient(zi, zj, a, b):
    """Gradient of ``-log q_ij`` with respect to ``z_i``."""
    diff = np.asarray(zi, dtype=np.float64) - zj
    s = diff @ diff
    if s <= 0:
        return np.zeros_like(diff)
    return 2.0 * a * b * s ** (b - 1.0) / (1.0 + a * s**b) * diff


def repulsive_gradient(zi, zm, a, b):
    """Gradient of ``-log(1 - q_im)`` with respect to ``z_i``."""
    diff = np.asarray(zi, dtype=np.float64) - zm
    s = diff @ diff
    if s <= 0:
        return np.zeros_like(diff)
    return -2.0 * b / (s * (1.0 + a * s**b)) * diff


def epochs_per_sample(weights, n_epochs):
    """Epoch spacing between visits so an edge is sampled ``n_epochs * w / w_max`` times."""
    weights = np.asarray(weights, dtype=np.float64)
    n_samples = n_epochs * weights / weights.max()
    out = np.full(weights.shape, -1.0)
    pos = n_samples > 0
    out[pos] = n_epochs / n_samples[pos]
    return out


def _clip(v):
    if v > GRAD_CLIP:
        return GRAD_CLIP
    if v < -GRAD_CLIP:
        return -GRAD_CLIP
    return v


_clip_nb = numba.njit(cache=True, inline="always")(_clip)


def _sgd_impl(emb, heads, tails, eps, a, b, n_epochs, initial_lr, neg_rate, seed, history):
    np.random.seed(seed)
    n_points, dim = emb.shape
    n_edges = heads.shape[0]
    next_sample = eps.copy()
    eps_neg = eps / neg_rate if neg_rate > 0 else eps.copy()
    next_neg = eps_neg.copy()
    for epoch in range(n_epochs):
        alpha = initial_lr * (1.0 - epoch / n_epochs)
        loss = 0.0
        visits = 0
        for e in numba.prange(n_edges):
            if eps[e] <= 0.0 or next_sample[e] > epoch + 1:
                continue
            i = heads[e]
            j = tails[e]
            s = 0.0
            for d in range(dim):
                diff = emb[i, d] - emb[j, d]
                s += diff * diff
            if s > 0.0:
                coeff = 2.0 * a * b * s ** (b - 1.0) / (1.0 + a * s**b)
                for d in range(dim):
                    g = _clip_nb(coeff * (emb[i, d] - emb[j, d]))
                    emb[i, d] -= alpha * g
                    emb[j, d] += alpha * g
            edge_loss = np.log1p(a * s**b)
            visits += 1
            next_sample[e] += eps[e]
            if neg_rate <= 0:
                loss += edge_loss
                continue
            n_neg = int((epoch + 1 - next_neg[e]) / eps_neg[e])
            for _ in range(n_neg):
                m = np.random.randint(n_points)
                if m == i:
                    continue
                s = 0.0
                for d in range(dim):
                    diff = emb[i, d] - emb[m, d]
                    s += diff * diff
                q = 1.0 / (1.0 + a * s**b)
                edge_loss += -np.log(max(1.0 - q, 1e-12))
                if s > 0.0:
                    coeff = 2.0 * b / (s * (1.0 + a * s**b))
                    for d in range(dim):
                        emb[i, d] += alpha * _clip_nb(coeff * (emb[i, d] - emb[m, d]))
                else:
                    for d in range(dim):
                        emb[i, d] += alpha * 4.0
            next_neg[e] += n_neg * eps_neg[e]
            loss += edge_loss
        history[epoch] = loss / max(visits, 1)
    return emb


_sgd_serial = numba.njit(cache=True)(_sgd_impl)
_sgd_parallel = None


def _get_parallel():
    global _sgd_parallel
    if _sgd_parallel is None:
        _sgd_parallel = numba.njit(parallel=True)(_sgd_impl)
    return _sgd_parallel


def optimize(graph, embedding, schedule=None, n_threads=1):
    """Run the attraction/negative-sampling SGD on ``embedding`` (modified copy returned).

    Each unordered edge is visited in both orientations; a visit attracts
    both endpoints and repels the head from ``negative_sample_rate`` uniformly
    drawn points per unit of its sampling budget. ``n_threads > 1`` runs the
    unsynchronised parallel variant, which is not bitwise reproducible.
    """
    schedule = schedule or OptimizerSchedule()
    if graph.n_points != embedding.n_points:
        raise DimensionError(
            f"graph has {graph.n_points} points, embedding has {embedding.n_points}"
        )
    n_epochs = schedule.resolve_epochs(graph.n_points)
    coords = np.ascontiguousarray(embedding.coords, dtype=np.float64).copy()
    history = np.zeros(n_epochs)
    if graph.n_edges == 0 or n_epochs == 0:
        return OptimizeResult(Embedding(coords, embedding.kernel), history)
    heads = np.concatenate([graph.heads, graph.tails])
    tails = np.concatenate([graph.tails, graph.heads])
    weights = np.concatenate([graph.weights, graph.weights])
    eps = epochs_per_sample(weights, n_epochs)
    kernel = embedding.kernel
    fn = _sgd_serial if n_threads == 1 else _get_parallel()
    if n_threads > 1:
        numba.set_num_threads(min(n_threads, numba.config.NUMBA_NUM_THREADS))
    fn(
        coords,
        heads,
        tails,
        eps,
        float(kernel.a),
        float(kernel.b),
        int(n_epochs),
        float(schedule.initial_lr),
        int(schedule.negative_sample_rate),
        int(schedule.seed) % (2**32),
        history,
    )
    if not np.all(np.isfinite(coords)):
        raise NumericError("embedding diverged to non-finite coordinates")
    return OptimizeResult(Embedding(coords, kernel), history)


def _pair_terms(p, q):
    q = np.clip(q, Q_CLAMP, 1.0 - Q_CLAMP)
    with np.errstate(divide="ignore", invalid="ignore"):
        att = np.where(p > 0, p * np.log(p / q), 0.0)
        rep = np.where(p < 1, (1.0 - p) * np.log((1.0 - p) / (1.0 - q)), 0.0)
    return att + rep


def full_cross_entropy(graph, embedding, chunk_size=512):
    """Exact fuzzy cross-entropy summed over all ``N(N-1)/2`` unordered pairs."""
    coords = embedding.coords if isinstance(embedding, Embedding) else np.asarray(embedding)
    kernel = embedding.kernel if isinstance(embedding, Embedding) else None
    if kernel is None:
        raise ParameterError("full_cross_entropy needs an Embedding carrying its kernel")
    n = coords.shape[0]
    if n != graph.n_points:
        raise DimensionError(f"graph has {graph.n_points} points, embedding has {n}")
    sq = np.einsum("ij,ij->i", coords, coords)
    total = 0.0
    for start in range(0, n, chunk_size):
        stop = min(n, start + chunk_size)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * coords[start:stop] @ coords.T
        np.maximum(d2, 0.0, out=d2)
        cols = np.arange(n)[None, :]
        rows = np.arange(start, stop)[:, None]
        upper = cols > rows
        q = np.clip(kernel.q(d2[upper]), Q_CLAMP, 1.0 - Q_CLAMP)
        total += -np.log1p(-q).sum()
    # swap the p = 0 term for the true term on graph edges
    diff = coords[graph.heads] - coords[graph.tails]
    q = kernel.q(np.einsum("ij,ij->i", diff, diff))
    qc = np.clip(q, Q_CLAMP, 1.0 - Q_CLAMP)
    total += _pair_terms(graph.weights, q).sum() + np.log1p(-qc).sum()
    return float(total)


def sample_edge_losses(graph, embedding, n_draws, negative_sample_rate=5, seed=None):
    """Monte-Carlo draws of the per-visit loss implied by the sampling scheme.

    A draw picks an oriented edge with probability proportional to its weight,
    scores ``-log q`` on it, and adds ``-log(1 - q)`` for
    ``negative_sample_rate`` uniform points (self draws contribute zero).
    """
    rng = check_random_state(seed)
    coords, kernel = embedding.coords, embedding.kernel
    heads = np.concatenate([graph.heads, graph.tails])
    tails = np.concatenate([graph.tails, graph.heads])
    w = np.concatenate([graph.weights, graph.weights])
    pick = rng.choice(heads.size, size=n_draws, p=w / w.sum())
    i, j = heads[pick], tails[pick]
    diff = coords[i] - coords[j]
    q_pos = np.clip(kernel.q(np.einsum("ij,ij->i", diff, diff)), Q_CLAMP, 1.0)
    loss = -np.log(q_pos)
    m = rng.integers(0, graph.n_points, size=(n_draws, negative_sample_rate))
    diff = coords[i][:, None, :] - coords[m]
    q_neg = kernel.q(np.einsum("ijk,ijk->ij", diff, diff))
    rep = -np.log(np.maximum(1.0 - q_neg, Q_CLAMP))
    rep[m == i[:, None]] = 0.0
    return loss + rep.sum(axis=1)


class UMAP(TransformerMixin, BaseEstimator):
    """Non-parametric UMAP.

    Parameters
    ----------
    n_neighbors : int, default=15
    n_components : int, default=2
    min_dist, spread : float
        Shape of the low-dimensional kernel.
    n_epochs : int or None
        None picks 500 epochs up to 10,000 points and 200 above.
    learning_rate : float, default=1.0
    negative_sample_rate : int, default=5
    init : {"pca", "random"} or ndarray
    knn_method : {"auto", "exact", "nn_descent"}
    random_state : int or None
    n_jobs : int, default=1
        More than one thread switches to the unsynchronised SGD.

    Attributes
    ----------
    embedding_ : ndarray of shape (n_samples, n_components)
    graph_ : FuzzyGraph
    knn_graph_ : NeighborGraph
    kernel_ : KernelParams
    loss_history_ : ndarray of per-epoch mean sampled loss
    """

    def __init__(
        self,
        n_neighbors=15,
        n_components=2,
        min_dist=0.1,
        spread=1.0,
        n_epochs=None,
        learning_rate=1.0,
        negative_sample_rate=5,
        init="pca",
        knn_method="auto",
        random_state=None,
        n_jobs=1,
    ):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.min_dist = min_dist
        self.spread = spread
        self.n_epochs = n_epochs
        self.learning_rate = learning_rate
        self.negative_sample_rate = negative_sample_rate
        self.init = init
        self.knn_method = knn_method
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _check_params(self, n_samples):
        if self.n_neighbors < 2:
            raise ParameterError("n_neighbors must be at least 2")
        if self.n_neighbors >= n_samples:
            raise ParameterError(f"n_neighbors must be < n_samples ({n_samples})")
        if self.n_components < 1:
            raise ParameterError("n_components must be >= 1")
        if self.min_dist < 0:
            raise ParameterError("min_dist must be >= 0")

    def fit(self, X, y=None, knn_graph=None):
        """Embed ``X``. A precomputed :class:`NeighborGraph` may replace the k-NN search."""
        X = check_data(X)
        self._check_params(X.shape[0])
        seeds = derive_seeds(self.random_state, 3)
        if knn_graph is None:
            knn_graph = nearest_neighbors(
                X, self.n_neighbors, seed=seeds[0], method=self.knn_method
            )
        elif not isinstance(knn_graph, NeighborGraph) or knn_graph.n_points != X.shape[0]:
            raise DimensionError("knn_graph must be a NeighborGraph over the rows of X")
        self.knn_graph_ = knn_graph
        self.graph_, self.smoothing_ = fuzzy_simplicial_set(knn_graph)
        self.kernel_ = fit_kernel_params(self.min_dist, self.spread)
        if isinstance(self.init, np.ndarray):
            start = check_data(self.init)
            if start.shape != (X.shape[0], self.n_components):
                raise DimensionError("init array must be n_samples x n_components")
        else:
            start = init_embedding(X, self.n_components, self.init, seeds[1])
        schedule = OptimizerSchedule(
            self.n_epochs, self.learning_rate, self.negative_sample_rate, seeds[2]
        )
        result = optimize(self.graph_, Embedding(start, self.kernel_), schedule, self.n_jobs)
        self.embedding_ = result.embedding.coords
        self.loss_history_ = result.loss_history
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).embedding_

    def cross_entropy(self):
        return full_cross_entropy(self.graph_, Embedding(self.embedding_, self.kernel_))
