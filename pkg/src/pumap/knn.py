"""k-nearest-neighbour graphs: exact brute force and NN-descent."""
import csv
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import DataError, DimensionError, NumericError, ParameterError

EXACT_THRESHOLD = 4096


@dataclass(frozen=True)
class NeighborGraph:
    """Per-point neighbour ids and distances, sorted ascending, no self loops."""

    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        dist = np.asarray(self.distances, dtype=np.float64)
        if idx.ndim != 2 or idx.shape != dist.shape:
            raise DimensionError(f"indices {idx.shape} and distances {dist.shape} differ")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "distances", dist)

    @property
    def n_points(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]

    def validate(self):
        n = self.n_points
        if np.any(self.indices < 0) or np.any(self.indices >= n):
            raise DataError("neighbour index out of range")
        if np.any(self.indices == np.arange(n)[:, None]):
            raise DataError("graph contains a self-neighbour")
        if np.any(self.distances < 0) or not np.all(np.isfinite(self.distances)):
            raise DataError("distances must be finite and non-negative")
        if np.any(np.diff(self.distances, axis=1) < 0):
            raise DataError("distances are not sorted per row")
        return self


def _check_inputs(data, k, metric):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError(f"expected a 2-D data matrix, got shape {data.shape}")
    n = data.shape[0]
    if metric != "euclidean":
        raise ParameterError(f"unsupported metric {metric!r}; pass a precomputed NeighborGraph")
    if n < 2:
        raise ParameterError("need at least two points")
    if not 1 <= k < n:
        raise ParameterError(f"k must satisfy 1 <= k < n_points ({n}), got {k}")
    if not np.isfinite(np.einsum("ij,ij->i", data, data).max()):
        raise NumericError("squared distances overflow float64; rescale the data")
    return data


def exact_knn(data, k=15, metric="euclidean", chunk_size=1024):
    """Brute-force k-NN; ties go to the lower index.

    Candidates are screened with the expanded ``|x|^2 + |y|^2 - 2 x.y`` form,
    then re-measured with direct differences before the final sort, so the
    result does not depend on the cancellation error of the fast form.
    """
    data = _check_inputs(data, k, metric)
    n = data.shape[0]
    sq = np.einsum("ij,ij->i", data, data)
    max_sq = sq.max()
    m = min(n - 1, 2 * k + 8)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, chunk_size):
        stop = min(n, start + chunk_size)
        block = data[start:stop]
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * block @ data.T
        rows = np.arange(stop - start)
        d2[rows, rows + start] = np.inf
        part = np.partition(d2, m - 1, axis=1)[:, m - 1]
        tol = 1e-9 * (sq[start:stop] + max_sq) + 1e-300
        for r in range(stop - start):
            i = start + r
            cand = np.flatnonzero(d2[r] <= part[r] + tol[r])
            diff = data[cand] - data[i]
            exact = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            order = np.lexsort((cand, exact))[:k]
            indices[i] = cand[order]
            distances[i] = exact[order]
    return NeighborGraph(indices, distances)


@numba.njit(cache=True)
def _dist(data, i, j):
    s = 0.0
    for t in range(data.shape[1]):
        d = data[i, t] - data[j, t]
        s += d * d
    return np.sqrt(s)


@numba.njit(cache=True)
def _heap_push(ind, dist, flag, row, j, d, is_new):
    """Insert into row's max-heap (root = farthest). Returns 1 on change."""
    if d >= dist[row, 0]:
        return 0
    k = ind.shape[1]
    for t in range(k):
        if ind[row, t] == j:
            return 0
    ind[row, 0] = j
    dist[row, 0] = d
    flag[row, 0] = is_new
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        if left >= k:
            break
        swap = left
        if right < k and dist[row, right] > dist[row, left]:
            swap = right
        if dist[row, swap] <= d:
            break
        ind[row, pos] = ind[row, swap]
        dist[row, pos] = dist[row, swap]
        flag[row, pos] = flag[row, swap]
        ind[row, swap] = j
        dist[row, swap] = d
        flag[row, swap] = is_new
        pos = swap
    return 1


@numba.njit(cache=True)
def _cand_push(cind, cpri, row, j, pri):
    """Keep the ``max_c`` candidates with the smallest random priority."""
    if pri >= cpri[row, 0]:
        return
    mc = cind.shape[1]
    for t in range(mc):
        if cind[row, t] == j:
            return
    cind[row, 0] = j
    cpri[row, 0] = pri
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        if left >= mc:
            break
        swap = left
        if right < mc and cpri[row, right] > cpri[row, left]:
            swap = right
        if cpri[row, swap] <= pri:
            break
        cind[row, pos] = cind[row, swap]
        cpri[row, pos] = cpri[row, swap]
        cind[row, swap] = j
        cpri[row, swap] = pri
        pos = swap


@numba.njit(cache=True)
def _nn_descent(data, k, seed, max_iters, delta, max_candidates):
    np.random.seed(seed)
    n = data.shape[0]
    ind = np.full((n, k), -1, dtype=np.int64)
    dist = np.full((n, k), np.inf)
    flag = np.zeros((n, k), dtype=np.uint8)

    pool = np.arange(n - 1)
    for i in range(n):
        # k distinct non-self neighbours via partial Fisher-Yates over {0..n-1}\{i}
        for t in range(n - 1):
            pool[t] = t if t < i else t + 1
        for t in range(k):
            r = t + np.random.randint(n - 1 - t)
            tmp = pool[t]
            pool[t] = pool[r]
            pool[r] = tmp
            j = pool[t]
            _heap_push(ind, dist, flag, i, j, _dist(data, i, j), 1)

    for _ in range(max_iters):
        new_c = np.full((n, max_candidates), -1, dtype=np.int64)
        new_p = np.full((n, max_candidates), np.inf)
        old_c = np.full((n, max_candidates), -1, dtype=np.int64)
        old_p = np.full((n, max_candidates), np.inf)
        for i in range(n):
            for t in range(k):
                j = ind[i, t]
                if j < 0:
                    continue
                pri = np.random.random()
                if flag[i, t]:
                    _cand_push(new_c, new_p, i, j, pri)
                    _cand_push(new_c, new_p, j, i, pri)
                else:
                    _cand_push(old_c, old_p, i, j, pri)
                    _cand_push(old_c, old_p, j, i, pri)
        # sampled "new" entries become old
        for i in range(n):
            for t in range(k):
                j = ind[i, t]
                for c in range(max_candidates):
                    if new_c[i, c] == j:
                        flag[i, t] = 0
                        break

        updates = 0
        for i in range(n):
            for a in range(max_candidates):
                p = new_c[i, a]
                if p < 0:
                    continue
                for b in range(a + 1, max_candidates):
                    q = new_c[i, b]
                    if q < 0 or q == p:
                        continue
                    d = _dist(data, p, q)
                    updates += _heap_push(ind, dist, flag, p, q, d, 1)
                    updates += _heap_push(ind, dist, flag, q, p, d, 1)
                for b in range(max_candidates):
                    q = old_c[i, b]
                    if q < 0 or q == p:
                        continue
                    d = _dist(data, p, q)
                    updates += _heap_push(ind, dist, flag, p, q, d, 1)
                    updates += _heap_push(ind, dist, flag, q, p, d, 1)
        if updates <= delta * k * n:
            break
    return ind, dist


def nn_descent(data, k=15, metric="euclidean", seed=0, max_iters=10, delta=0.001):
    """Approximate k-NN graph by neighbour-of-neighbour refinement.

    Candidate pools hold ``k`` entries; iteration stops early once fewer than
    ``delta * n * k`` heap entries change in a sweep. Deterministic per seed.
    """
    data = _check_inputs(data, k, metric)
    ind, dist = _nn_descent(data, k, int(seed), int(max_iters), float(delta), k)
    # per-row sort by (distance, index)
    rows = np.arange(ind.shape[0])[:, None]
    order = np.argsort(ind, axis=1, kind="stable")
    ind, dist = ind[rows, order], dist[rows, order]
    order = np.argsort(dist, axis=1, kind="stable")
    return NeighborGraph(ind[rows, order], dist[rows, order])


def nearest_neighbors(data, k=15, metric="euclidean", seed=0, method="auto"):
    """Exact search below ``EXACT_THRESHOLD`` points, NN-descent above."""
    n = np.shape(data)[0]
    if method == "auto":
        method = "exact" if n < EXACT_THRESHOLD else "nn_descent"
    if method == "exact":
        return exact_knn(data, k, metric)
    if method == "nn_descent":
        return nn_descent(data, k, metric, seed=seed)
    raise ParameterError(f"unknown k-NN method {method!r}")


def graph_recall(approx, exact):
    """Fraction of exact neighbour ids recovered by ``approx``."""
    hits = 0
    for a, e in zip(approx.indices, exact.indices):
        hits += np.intersect1d(a, e).size
    return hits / exact.indices.size


def write_graph_csv(graph, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "neighbor_id", "distance"])
        for i in range(graph.n_points):
            for j, d in zip(graph.indices[i], graph.distances[i]):
                writer.writerow([i, int(j), repr(float(d))])


def read_graph_csv(path):
    """Read ``point_id, neighbor_id, distance`` rows into a NeighborGraph."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, rec in enumerate(reader, start=1):
            if not rec or (lineno == 1 and rec[0].strip() == "point_id"):
                continue
            if len(rec) != 3:
                raise DataError(f"line {lineno}: expected 3 fields, got {len(rec)}")
            try:
                i, j, d = int(rec[0]), int(rec[1]), float(rec[2])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            rows.setdefault(i, []).append((d, j))
    if not rows:
        raise DataError(f"{path}: no edges")
    n = max(rows) + 1
    ks = {len(v) for v in rows.values()}
    if len(rows) != n or len(ks) != 1:
        raise DataError("every point needs the same number of neighbours")
    k = ks.pop()
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    for i, edges in rows.items():
        edges.sort()
        distances[i] = [d for d, _ in edges]
        indices[i] = [j for _, j in edges]
    return NeighborGraph(indices, distances).validate()
