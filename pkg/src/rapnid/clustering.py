"""k-means, Hungarian assignment, and cluster-count estimation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    # inertia after every assignment step, for monotonicity checks
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass
class AssignmentMapping:
    mapping: dict[int, int]
    total_cost: float

    def as_array(self, n: int, fill: int = -1) -> np.ndarray:
        out = np.full(n, fill, dtype=int)
        for r, c in self.mapping.items():
            out[r] = c
        return out


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator,
                    n_trials: int | None = None) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each step draws ``n_trials`` candidates (default ``2 + ln k``) with
    probability proportional to squared distance from the chosen centers
    and keeps the one that lowers the total potential most.
    """
    n = points.shape[0]
    if n_trials is None:
        n_trials = 2 + int(np.log(k))
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen center
            idx = int(rng.integers(n))
            chosen.append(idx)
            continue
        cdf = np.cumsum(closest / total)
        cand = np.minimum(np.searchsorted(cdf, rng.random(n_trials), side="right"), n - 1)
        cand_d = np.minimum(closest[None, :], _sq_dists(points, points[cand]).T)
        best = int(np.argmin(cand_d.sum(axis=1)))
        chosen.append(int(cand[best]))
        closest = cand_d[best]
    return points[chosen].copy()


def _repair_empty(points, labels, centroids, dist_to_own, counts):
    """Move each empty centroid onto the point farthest from its own centroid."""
    taken = np.zeros(len(points), dtype=bool)
    for j in np.flatnonzero(counts == 0):
        cand = np.where(taken, -np.inf, dist_to_own)
        idx = int(np.argmax(cand))
        taken[idx] = True
        centroids[j] = points[idx]
    return centroids


def _lloyd(points, init, max_iter, tol):
    centroids = init.copy()
    k = centroids.shape[0]
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(points, centroids)
        labels = np.argmin(d2, axis=1)  # lowest index wins ties
        own = d2[np.arange(len(points)), labels]
        history.append(float(own.sum()))
        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centroids)
        np.add.at(new, labels, points)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            new = _repair_empty(points, labels, new, own, counts)
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(points, centroids)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    history.append(inertia)
    return ClusterAssignment(labels, centroids, inertia, n_iter, history)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6,
           n_init: int = 1) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding.

    With ``n_init > 1`` the run with the lowest inertia is kept; the
    restarts draw from one generator seeded by ``seed``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ClusteringError("points must be a 2-D array")
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if k > X.shape[0]:
        raise ClusteringError(f"k={k} exceeds the number of points ({X.shape[0]})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        result = _lloyd(X, kmeans_plusplus(X, k, rng), max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def assign(points, centroids) -> np.ndarray:
    return np.argmin(_sq_dists(np.asarray(points, float), np.asarray(centroids, float)), axis=1)


def hungarian(cost) -> AssignmentMapping:
    """Minimum-cost perfect matching of rows to columns of a square matrix.

    Shortest augmenting path with dual potentials, O(n^3).
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ClusteringError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ClusteringError("cost matrix must be finite")
    n = C.shape[0]
    if n == 0:
        return AssignmentMapping({}, 0.0)
    # 1-based bookkeeping; index 0 is the virtual source column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[col] = row
    way = np.zeros(n + 1, dtype=int)
    for row in range(1, n + 1):
        match[0] = row
        col0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[col0] = True
            r = match[col0]
            free = ~used[1:]
            reduced = C[r - 1] - u[r] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = col0
            cand = np.where(free, minv[1:], np.inf)
            col1 = int(np.argmin(cand)) + 1
            delta = cand[col1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            col0 = col1
            if match[col0] == 0:
                break
        while col0:
            col1 = way[col0]
            match[col0] = match[col1]
            col0 = col1
    mapping = {int(match[j]) - 1: j - 1 for j in range(1, n + 1)}
    mapping = dict(sorted(mapping.items()))
    total = float(sum(C[r, c] for r, c in mapping.items()))
    return AssignmentMapping(mapping, total)


def _kde(samples: np.ndarray, at: np.ndarray, bandwidth: float) -> np.ndarray:
    t = (at[:, None] - samples[None, :]) / bandwidth
    return np.exp(-0.5 * t * t).sum(axis=1)


def _has_valley(a: np.ndarray, b: np.ndarray, ca: np.ndarray, cb: np.ndarray,
                valley_ratio: float) -> bool:
    """True if the 1-D density between two clusters dips below
    ``valley_ratio`` times the lower of the densities at their centroids."""
    axis = cb - ca
    length = np.linalg.norm(axis)
    if length == 0.0:
        return False
    axis /= length
    pa, pb = (a - ca) @ axis, (b - ca) @ axis
    n = len(pa) + len(pb)
    within = np.concatenate([pa - pa.mean(), pb - pb.mean()])
    spread = np.sqrt(np.mean(within**2))
    if spread == 0.0:
        return True
    bw = 1.06 * spread * n ** (-0.2)
    both = np.concatenate([pa, pb])
    dens = _kde(both, np.array([0.0, 0.5 * length, length]), bw)
    return dens[1] < valley_ratio * min(dens[0], dens[2])


def merge_unimodal(points, result: ClusterAssignment, valley_ratio: float = 0.3) -> np.ndarray:
    """Merge clusters that are fragments of one density mode.

    Every pair of clusters is projected onto the line through their
    centroids; pairs with no density valley between the centroids are
    joined (transitively). Returns relabeled cluster indices, dense from 0.
    """
    X = np.asarray(points, dtype=float)
    k = result.k
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    members = [X[result.labels == j] for j in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if len(members[i]) == 0 or len(members[j]) == 0:
                continue
            if not _has_valley(members[i], members[j], result.centroids[i].copy(),
                               result.centroids[j], valley_ratio):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(j) for j in range(k)])
    _, dense = np.unique(roots, return_inverse=True)
    return dense[result.labels]


def estimate_k(points, k_init: int, drop_ratio: float = 0.5, seed: int = 0,
               n_init: int = 1, merge: bool = True, valley_ratio: float = 0.3) -> int:
    """Estimate the number of clusters by over-clustering.

    Runs k-means with ``k_init`` centers, optionally merges fragments of the
    same density mode (see ``merge_unimodal``), then counts the groups that
    keep at least ``drop_ratio`` of the uniform share ``n / k_init``.
    """
    X = np.asarray(points, dtype=float)
    if not 0.0 < drop_ratio < 1.0:
        raise ClusteringError("drop_ratio must lie in (0, 1)")
    result = kmeans(X, k_init, seed=seed, n_init=n_init)
    labels = merge_unimodal(X, result, valley_ratio) if merge else result.labels
    threshold = drop_ratio * X.shape[0] / k_init
    surviving = int(np.sum(np.bincount(labels) >= threshold))
    if surviving == 0:
        raise ClusteringError("cluster-count estimation failed: every cluster was dropped")
    return surviving
