"""Embedding quality metrics.

Rank-based metrics break distance ties by point index so results are
deterministic. Data may be passed as a precomputed square distance matrix
(``metric="precomputed"``).
"""
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from ._validation import check_random_state
from .exceptions import DimensionError, ParameterError

# above this many features squared distances come from the Gram matrix
GRAM_THRESHOLD = 64
PAIR_BUDGET = 100_000
ALL_PAIRS_MAX_N = 2000


class DegenerateWarning(RuntimeWarning):
    """A statistic was undefined (e.g. zero variance) and reported as 0."""


def _as_2d(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def _sq_dist_rows(x, rows):
    """Squared distances from ``x[rows]`` to every row of ``x``."""
    if x.shape[1] <= GRAM_THRESHOLD:
        return cdist(x[rows], x, "sqeuclidean")
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[rows, None] + sq[None, :] - 2.0 * x[rows] @ x.T
    return np.maximum(d2, 0.0)


def _dist_rows(x, rows, precomputed):
    if precomputed:
        return np.asarray(x[rows], dtype=np.float64)
    return _sq_dist_rows(x, rows)


def _check_pair(data, embedding, metric):
    embedding = _as_2d(embedding, "embedding")
    data = _as_2d(data, "data")
    precomputed = metric == "precomputed"
    if not precomputed and metric != "euclidean":
        raise ParameterError(f"unsupported metric {metric!r}")
    n = embedding.shape[0]
    if data.shape[0] != n or (precomputed and data.shape != (n, n)):
        raise DimensionError(f"data {data.shape} and embedding {embedding.shape} do not align")
    return data, embedding, precomputed


def _rank_rows(dist, rows):
    """1-based neighbour ranks per row (self gets 0); ties broken by index."""
    dist = dist.copy()
    dist[np.arange(len(rows)), rows] = -np.inf
    order = np.argsort(dist, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(dist.shape[1])[None, :], axis=1)
    return ranks


def _chunks(n, chunk):
    for start in range(0, n, chunk):
        yield np.arange(start, min(n, start + chunk))


def trustworthiness(data, embedding, k=5, metric="euclidean", chunk_size=256):
    """Penalise embedding neighbours that are far down the data-space ranking.

    ``T(k) = 1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in N_k^Z(i)} max(0, r_X(i, j) - k)``
    where ``r_X(i, j)`` is the data-space rank of ``j`` among ``i``'s neighbours.
    """
    data, embedding, precomputed = _check_pair(data, embedding, metric)
    n = embedding.shape[0]
    if k < 1 or k >= n / 2:
        raise ParameterError(f"k must satisfy 1 <= k < n/2 ({n / 2}), got {k}")
    penalty = 0
    for rows in _chunks(n, chunk_size):
        rank_x = _rank_rows(_dist_rows(data, rows, precomputed), rows)
        dz = _sq_dist_rows(embedding, rows)
        dz[np.arange(len(rows)), rows] = -np.inf
        nbrs = np.argsort(dz, axis=1, kind="stable")[:, 1 : k + 1]
        r = np.take_along_axis(rank_x, nbrs, axis=1)
        penalty += int(np.maximum(r - k, 0).sum())
    return float(1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty)


def rnx_curve(data, embedding, metric="euclidean", chunk_size=256):
    """``R_NX(K)`` for ``K = 1 .. N-2`` from the exact co-ranking counts."""
    data, embedding, precomputed = _check_pair(data, embedding, metric)
    n = embedding.shape[0]
    if n < 4:
        raise ParameterError("need at least 4 points")
    counts = np.zeros(n, dtype=np.int64)
    for rows in _chunks(n, chunk_size):
        rx = _rank_rows(_dist_rows(data, rows, precomputed), rows)
        rz = _rank_rows(_sq_dist_rows(embedding, rows), rows)
        m = np.maximum(rx, rz)
        m = m[m > 0]
        counts += np.bincount(m, minlength=n)[:n]
    K = np.arange(1, n - 1)
    overlap = np.cumsum(counts)[K]
    q = overlap / (K * n)
    return ((n - 1) * q - K) / (n - 1 - K)


def rnx_auc(data, embedding, metric="euclidean"):
    """Area under ``R_NX`` on a log-K axis: ``sum_K R(K)/K / sum_K 1/K``."""
    data, embedding, _ = _check_pair(data, embedding, metric)
    if embedding.shape[0] < 10:
        raise ParameterError("rnx_auc needs at least 10 points")
    r = rnx_curve(data, embedding, metric)
    inv_k = 1.0 / np.arange(1, r.size + 1)
    return float((r * inv_k).sum() / inv_k.sum())


def _knn_predict(train_x, train_y, test_x, k, chunk_size=1024):
    n_labels = int(train_y.max()) + 1
    out = np.empty(test_x.shape[0], dtype=np.int64)
    for start in range(0, test_x.shape[0], chunk_size):
        d = cdist(test_x[start : start + chunk_size], train_x, "sqeuclidean")
        nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
        votes = np.zeros((d.shape[0], n_labels), dtype=np.int64)
        np.add.at(votes, (np.repeat(np.arange(d.shape[0]), k), train_y[nbrs].ravel()), 1)
        # argmax returns the first maximum, i.e. the lowest label on ties
        out[start : start + chunk_size] = np.argmax(votes, axis=1)
    return out


def _splits(n, split, seed):
    if isinstance(split, tuple) and len(split) == 2:
        yield np.asarray(split[0]), np.asarray(split[1])
        return
    rng = check_random_state(seed)
    perm = rng.permutation(n)
    if isinstance(split, float):
        if not 0.0 < split < 1.0:
            raise ParameterError("a float split is the held-out fraction in (0, 1)")
        n_test = int(round(split * n))
        yield perm[n_test:], perm[:n_test]
        return
    if isinstance(split, (int, np.integer)) and split >= 2:
        for fold in np.array_split(perm, int(split)):
            yield np.setdiff1d(perm, fold), fold
        return
    raise ParameterError(f"unrecognised split {split!r}")


def knn_accuracy(embedding, labels, k=1, split=5, seed=0):
    """k-NN label accuracy of embedded points.

    ``split`` is a number of folds (mean accuracy over folds), a held-out
    fraction, or an explicit ``(train_idx, test_idx)`` pair. Votes are tied
    in favour of the lowest label.
    """
    embedding = _as_2d(embedding, "embedding")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (embedding.shape[0],):
        raise DimensionError("labels must have one entry per embedded point")
    if labels.min() < 0:
        raise ParameterError("labels must be non-negative")
    accs = []
    for train, test in _splits(embedding.shape[0], split, seed):
        if train.size < k or test.size == 0:
            raise ParameterError(f"split leaves {train.size} train and {test.size} test points for k={k}")
        pred = _knn_predict(embedding[train], labels[train], embedding[test], k)
        accs.append(np.mean(pred == labels[test]))
    return float(np.mean(accs))


def silhouette(embedding, labels, chunk_size=512):
    """Mean silhouette coefficient; members of singleton classes score 0."""
    embedding = _as_2d(embedding, "embedding")
    _, codes = np.unique(np.asarray(labels), return_inverse=True)
    n = embedding.shape[0]
    if codes.shape != (n,):
        raise DimensionError("labels must have one entry per embedded point")
    n_classes = codes.max() + 1
    if n_classes < 2:
        raise ParameterError("silhouette needs at least 2 classes")
    sizes = np.bincount(codes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), codes] = 1.0
    scores = np.zeros(n)
    for rows in _chunks(n, chunk_size):
        dist = np.sqrt(_sq_dist_rows(embedding, rows))
        sums = dist @ onehot
        own = codes[rows]
        own_size = sizes[own]
        a = sums[np.arange(len(rows)), own] / np.maximum(own_size - 1, 1)
        mean_other = sums / sizes[None, :]
        mean_other[np.arange(len(rows)), own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[rows] = np.where(own_size > 1, s, 0.0)
    return float(scores.mean())


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(labels_a, labels_b):
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    _, a = np.unique(np.asarray(labels_a), return_inverse=True)
    _, b = np.unique(np.asarray(labels_b), return_inverse=True)
    if a.shape != b.shape:
        raise DimensionError("label vectors differ in length")
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    h_a, h_b = _entropy(joint.sum(axis=1)), _entropy(joint.sum(axis=0))
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    h_joint = _entropy(joint.ravel())
    mi = max(h_a + h_b - h_joint, 0.0)
    return float(min(mi / (0.5 * (h_a + h_b)), 1.0))


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = cdist(x, centers[:1], "sqeuclidean").ravel()
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = min(np.searchsorted(np.cumsum(closest), rng.random() * total), n - 1)
        centers[c] = x[idx]
        closest = np.minimum(closest, cdist(x, centers[c : c + 1], "sqeuclidean").ravel())
    return centers


def kmeans(x, k, n_restarts=5, seed=0, max_iter=300, tol=1e-10):
    """Lloyd's algorithm with k-means++ seeding; best restart by inertia.

    A cluster that empties is re-seeded at the point farthest from its
    current centroid.
    """
    x = _as_2d(x, "x")
    if not 1 <= k <= x.shape[0]:
        raise ParameterError(f"k must lie in [1, {x.shape[0]}]")
    rng = check_random_state(seed)
    best = None
    for _ in range(n_restarts):
        centers = _kmeans_pp(x, k, rng)
        prev = np.inf
        for it in range(1, max_iter + 1):
            d = cdist(x, centers, "sqeuclidean")
            assign = np.argmin(d, axis=1)
            point_d = d[np.arange(x.shape[0]), assign]
            for c in range(k):
                members = assign == c
                if members.any():
                    centers[c] = x[members].mean(axis=0)
                else:
                    far = int(np.argmax(point_d))
                    centers[c] = x[far]
                    assign[far] = c
                    point_d[far] = 0.0
            inertia = float(cdist(x, centers, "sqeuclidean")[np.arange(x.shape[0]), assign].sum())
            if prev - inertia <= tol * max(prev, 1.0):
                break
            prev = inertia
        d = cdist(x, centers, "sqeuclidean")
        assign = np.argmin(d, axis=1)
        inertia = float(d[np.arange(x.shape[0]), assign].sum())
        if best is None or inertia < best.inertia:
            best = KMeansResult(assign, centers.copy(), inertia, it)
    return best


def kmeans_nmi(embedding, labels, k_range=None, n_restarts=5, seed=0, return_k=False):
    """NMI against ``labels`` of the k-means clustering with the best silhouette.

    ``k_range`` defaults to ``round(0.5 C) .. round(1.5 C)`` for ``C`` classes
    (at least 2).
    """
    embedding = _as_2d(embedding, "embedding")
    labels = np.asarray(labels)
    n_classes = np.unique(labels).size
    if k_range is None:
        lo = max(2, int(np.floor(0.5 * n_classes + 0.5)))
        hi = max(lo, int(np.floor(1.5 * n_classes + 0.5)))
        k_range = range(lo, hi + 1)
    rng = check_random_state(seed)
    best_k, best_sil, best_assign = None, -np.inf, None
    for k in k_range:
        km = kmeans(embedding, k, n_restarts, rng)
        if np.unique(km.labels).size < 2:
            sil = -np.inf
        else:
            sil = silhouette(embedding, km.labels)
        if sil > best_sil:
            best_k, best_sil, best_assign = k, sil, km.labels
    if best_assign is None:
        best_assign = np.zeros(embedding.shape[0], dtype=np.int64)
    score = nmi(best_assign, labels)
    return (score, best_k) if return_k else score


def _pearson(u, v):
    u = u - u.mean()
    v = v - v.mean()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        warnings.warn("zero variance in a distance vector; correlation reported as 0", DegenerateWarning)
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def sample_pairs(n, n_pairs, seed=0):
    """All ``i < j`` pairs when ``n <= 2000``, else ``n_pairs`` uniform pairs with ``i != j``."""
    if n <= ALL_PAIRS_MAX_N:
        return np.triu_indices(n, k=1)
    rng = check_random_state(seed)
    i = rng.integers(0, n, size=n_pairs)
    j = (i + rng.integers(1, n, size=n_pairs)) % n
    return i, j


def distance_correlation(data, embedding, sample_pairs_count=PAIR_BUDGET, rank=False, seed=0):
    """Pearson (or Spearman with ``rank=True``) correlation of pairwise distances."""
    data = _as_2d(data, "data")
    embedding = _as_2d(embedding, "embedding")
    n = data.shape[0]
    if embedding.shape[0] != n:
        raise DimensionError("data and embedding row counts differ")
    if n < 3:
        raise ParameterError("need at least 3 points")
    i, j = sample_pairs(n, sample_pairs_count, seed)
    dx = np.sqrt(((data[i] - data[j]) ** 2).sum(axis=1))
    dz = np.sqrt(((embedding[i] - embedding[j]) ** 2).sum(axis=1))
    if rank:
        dx, dz = rankdata(dx), rankdata(dz)
    return _pearson(dx, dz)


@dataclass
class MetricReport:
    trustworthiness: float
    rnx_auc: float
    knn_acc: dict = field(default_factory=dict)
    silhouette: float = float("nan")
    nmi: float = float("nan")
    distance_correlation: float = float("nan")

    def validate(self):
        checks = [
            ("trustworthiness", self.trustworthiness, 0.0, 1.0),
            ("silhouette", self.silhouette, -1.0, 1.0),
            ("nmi", self.nmi, 0.0, 1.0),
            ("distance_correlation", self.distance_correlation, -1.0, 1.0),
        ]
        checks += [(f"knn_acc[{k}]", v, 0.0, 1.0) for k, v in self.knn_acc.items()]
        for name, value, lo, hi in checks:
            if not np.isnan(value) and not lo - 1e-12 <= value <= hi + 1e-12:
                raise ParameterError(f"{name}={value} outside [{lo}, {hi}]")
        return self

    def to_dict(self):
        out = asdict(self)
        out["knn_acc"] = {str(k): v for k, v in self.knn_acc.items()}
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in out.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        nan = float("nan")
        return cls(
            trustworthiness=raw["trustworthiness"],
            rnx_auc=raw["rnx_auc"],
            knn_acc={int(k): v for k, v in raw["knn_acc"].items()},
            silhouette=nan if raw["silhouette"] is None else raw["silhouette"],
            nmi=nan if raw["nmi"] is None else raw["nmi"],
            distance_correlation=nan if raw["distance_correlation"] is None else raw["distance_correlation"],
        )


def evaluate(data, embedding, labels=None, k=5, knn_ks=(1, 5), seed=0, rnx=True):
    """Compute a :class:`MetricReport`; label-based fields are NaN without labels."""
    data = _as_2d(data, "data")
    embedding = _as_2d(embedding, "embedding")
    report = MetricReport(
        trustworthiness=trustworthiness(data, embedding, k),
        rnx_auc=rnx_auc(data, embedding) if rnx else float("nan"),
        distance_correlation=distance_correlation(data, embedding, rank=True, seed=seed),
    )
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        report.knn_acc = {kk: knn_accuracy(embedding, labels, kk, seed=seed) for kk in knn_ks}
        report.silhouette = silhouette(embedding, labels)
        report.nmi = kmeans_nmi(embedding, labels, seed=seed)
    return report.validate()


def format_table(reports):
    """Aligned text table, one row per named report."""
    reports = dict(reports)
    knn_keys = sorted({k for r in reports.values() for k in r.knn_acc})
    header = ["method", "trust", "rnx_auc", *[f"knn{k}" for k in knn_keys], "silhouette", "nmi", "dist_corr"]
    rows = []
    for name, r in reports.items():
        vals = [r.trustworthiness, r.rnx_auc, *[r.knn_acc.get(k, float("nan")) for k in knn_keys]]
        vals += [r.silhouette, r.nmi, r.distance_correlation]
        rows.append([name] + [("-" if np.isnan(v) else f"{v:.4f}") for v in vals])
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)
