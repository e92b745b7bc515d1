"""K-medoids (L1, PAM), K-means (L2, Lloyd) and elbow selection of K."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from gicaps.rng import derive_rng

log = logging.getLogger(__name__)

MEDOID_CAP = 20_000


class ClusteringError(ValueError):
    pass


@dataclass
class Clustering:
    assignments: np.ndarray
    centers: np.ndarray
    center_indices: np.ndarray
    cost: float
    cost_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centers)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def _check(points, k):
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if not 1 <= k <= len(x):
        raise ClusteringError(f"k={k} must lie in [1, {len(x)}]")
    return x


def _pam_build(dist, k):
    medoids = [int(np.argmin(dist.sum(axis=1)))]
    near = dist[medoids[0]].copy()
    for _ in range(1, k):
        gain = np.minimum(dist, near[None, :]).sum(axis=1)
        gain[medoids] = np.inf
        h = int(np.argmin(gain))
        medoids.append(h)
        near = np.minimum(near, dist[h])
    return medoids


def _nearest_two(dist, medoids):
    dm = dist[medoids]  # (k, n)
    if len(medoids) == 1:
        return np.zeros(dm.shape[1], dtype=np.int64), dm[0], np.full(dm.shape[1], np.inf)
    order = np.argsort(dm, axis=0, kind="stable")
    first = order[0]
    cols = np.arange(dm.shape[1])
    return first, dm[first, cols], dm[order[1], cols]


def _pam(dist, k, max_iter):
    """Greedy build followed by slot-wise swaps; each accepted swap strictly
    lowers the total L1 cost."""
    n = dist.shape[0]
    medoids = _pam_build(dist, k)
    nearest, d1, d2 = _nearest_two(dist, medoids)
    cost = float(d1.sum())
    history = [cost]
    for _ in range(max_iter):
        improved = False
        for slot in range(k):
            # distance to the closest medoid once this slot is vacated
            rest = np.where(nearest == slot, d2, d1)
            trial = np.minimum(dist, rest[None, :]).sum(axis=1)
            trial[medoids] = np.inf
            h = int(np.argmin(trial))
            if trial[h] < cost - 1e-12 * max(1.0, abs(cost)):
                medoids[slot] = h
                nearest, d1, d2 = _nearest_two(dist, medoids)
                new_cost = float(d1.sum())
                if new_cost > cost + 1e-9 * max(1.0, abs(cost)):
                    raise AssertionError("PAM swap increased the cost")
                cost = new_cost
                history.append(cost)
                improved = True
        if not improved or n == k:
            break
    return medoids, history


def kmedoids(points, k: int, seed: int = 0, max_iter: int = 100) -> Clustering:
    """PAM k-medoids under the L1 metric.

    Classes above ``MEDOID_CAP`` rows are clustered on a seeded subsample and
    then every row is reassigned to its nearest medoid.
    """
    x = _check(points, k)
    n = len(x)
    if n > MEDOID_CAP:
        rng = derive_rng(seed, "kmedoids-subsample")
        sub = np.sort(rng.choice(n, MEDOID_CAP, replace=False))
    else:
        sub = np.arange(n)
    dist = cdist(x[sub], x[sub], metric="cityblock")
    local, history = _pam(dist, k, max_iter)
    idx = sub[np.asarray(local, dtype=np.int64)]
    full = cdist(x, x[idx], metric="cityblock")
    assign = np.argmin(full, axis=1)
    # a medoid always belongs to its own cluster, even when duplicated
    assign[idx] = np.arange(k)
    cost = float(full[np.arange(n), assign].sum())
    return Clustering(assign, x[idx].copy(), idx, cost, history)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> Clustering:
    """Lloyd iterations from farthest-point seeding (first center drawn
    from the seeded stream). Empty clusters restart at the farthest point."""
    x = _check(points, k)
    n = len(x)
    rng = derive_rng(seed, "kmeans-init")
    first = int(rng.integers(n))
    centers = [x[first]]
    near = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        j = int(np.argmax(near))
        centers.append(x[j])
        near = np.minimum(near, ((x - x[j]) ** 2).sum(axis=1))
    centers = np.array(centers)
    assign = None
    history = []
    for _ in range(max_iter):
        d = cdist(x, centers, metric="sqeuclidean")
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        own = d[np.arange(n), assign]
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(own))
                centers[c] = x[far]
                assign[far] = c
                own[far] = 0.0
    d = cdist(x, centers, metric="sqeuclidean")
    assign = np.argmin(d, axis=1)
    cost = float(d[np.arange(n), assign].sum())
    return Clustering(assign, centers, np.array([], dtype=np.int64), cost, history)


def elbow_index(costs) -> int:
    """Position maximising the discrete second difference of ``costs``;
    the first position wins ties."""
    c = np.asarray(costs, dtype=float)
    curv = c[:-2] - 2 * c[1:-1] + c[2:]
    return 1 + int(np.argmax(curv))


def select_k_elbow(points, k_range, seed: int = 0, method: str = "kmedoids") -> int:
    ks = sorted(int(k) for k in k_range)
    if not ks:
        raise ClusteringError("empty k range")
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if ks[-1] > len(x):
        raise ClusteringError(f"k={ks[-1]} exceeds the number of points ({len(x)})")
    if len(ks) < 3:
        log.warning("elbow needs at least 3 candidate values; returning k=%d", ks[0])
        return ks[0]
    if method == "kmedoids":
        if len(x) > MEDOID_CAP:
            costs = [kmedoids(x, k, seed).cost for k in ks]
        else:
            dist = cdist(x, x, metric="cityblock")
            costs = []
            for k in ks:
                med, _ = _pam(dist, k, 100)
                costs.append(float(dist[med].min(axis=0).sum()))
    elif method == "kmeans":
        costs = [kmeans(x, k, seed).cost for k in ks]
    else:
        raise ClusteringError(f"unknown method {method!r}")
    return ks[elbow_index(costs)]
