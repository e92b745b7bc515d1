"""Reference resamplers: SMOTE, ADASYN, random over- and under-sampling.

Synthetic points carry the same provenance records as the geometric
oversampler (generating pair and interpolation parameter), with no forbidden
intervals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from gicaps.dataset import Dataset
from gicaps.oversample import SyntheticRecord, _largest_remainder
from gicaps.rng import derive_rng

log = logging.getLogger(__name__)


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    k_neighbors: int = 5
    smote_percent: int = 300
    adasyn_beta: float = 1.0
    adasyn_major_cap: int | None = None

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if self.smote_percent < 0:
            raise ValueError("smote_percent must be non-negative")
        if not 0.0 <= self.adasyn_beta <= 1.0:
            raise ValueError("adasyn_beta must lie in [0, 1]")
        if self.adasyn_major_cap is not None and self.adasyn_major_cap < 1:
            raise ValueError("adasyn_major_cap must be positive")


@dataclass
class BaselineResult:
    dataset: Dataset
    records: list = field(default_factory=list)
    rejected: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    weights: np.ndarray | None = None


def _class_rows(ds, class_i, min_size=1):
    rows = ds.class_index.get(class_i, np.array([], dtype=np.int64))
    if len(rows) < min_size:
        raise BaselineError(f"class {class_i} has {len(rows)} point(s); need at least {min_size}")
    return rows


def _same_class_neighbours(ds, rows, k):
    """k nearest same-class rows of every row in ``rows``, self excluded.
    ``k`` is lowered to ``len(rows) - 1`` with a warning."""
    if k >= len(rows):
        log.warning("k_neighbors=%d reduced to %d for a class of %d points", k, len(rows) - 1, len(rows))
        k = len(rows) - 1
    pts = ds.features[rows]
    _, nb = cKDTree(pts).query(pts, k=k + 1)
    nb = np.atleast_2d(nb)
    out = np.empty((len(rows), k), dtype=np.int64)
    for i, cand in enumerate(nb):
        cand = cand[cand != i][:k]
        out[i] = rows[cand]
    return out


def _open_unit(rng, n):
    u = rng.uniform(size=n)
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.uniform(size=int(zero.sum()))
    return u


def _interpolate(ds, class_i, seeds, neighbours, rng):
    """One synthetic point per entry of ``seeds`` (row positions within the
    class), toward a uniformly chosen neighbour."""
    x = ds.features
    pick = rng.integers(neighbours.shape[1], size=len(seeds))
    u = _open_unit(rng, len(seeds))
    records = []
    for s, j, t in zip(seeds, pick, u):
        m = int(ds.class_index[class_i][s])
        v = int(neighbours[s, j])
        records.append(SyntheticRecord(x[m] + t * (x[v] - x[m]), class_i, m, v, float(t), ()))
    return records


def _append(ds: Dataset, records) -> Dataset:
    if not records:
        return ds
    new_x = np.array([r.point for r in records])
    new_y = np.array([r.class_id for r in records], dtype=np.int64)
    return Dataset(np.vstack([ds.features, new_x]), np.concatenate([ds.labels, new_y]),
                   ds.feature_names, ds.label_names)


def smote_records(ds: Dataset, class_i: int, cfg: BaselineConfig, seed: int = 0):
    rows = _class_rows(ds, class_i, 2)
    per_point, rest = divmod(int(cfg.smote_percent), 100)
    rng = derive_rng(seed, "smote", class_i)
    nb = _same_class_neighbours(ds, rows, cfg.k_neighbors)
    seeds = np.repeat(np.arange(len(rows)), per_point)
    if rest:
        # fractional part: a random subset of points spawns one more
        extra = int(round(len(rows) * rest / 100))
        seeds = np.concatenate([seeds, np.sort(rng.choice(len(rows), extra, replace=False))])
    return _interpolate(ds, class_i, seeds, nb, rng)


def smote(ds: Dataset, class_i: int, cfg: BaselineConfig, seed: int = 0) -> BaselineResult:
    """Each point of ``class_i`` spawns ``smote_percent / 100`` synthetics."""
    recs = smote_records(ds, class_i, cfg, seed)
    return BaselineResult(_append(ds, recs), recs)


def adasyn_weights(ds: Dataset, class_i: int, k: int) -> np.ndarray:
    """Share of foreign-class points among each point's k nearest neighbours
    (all classes), normalised to sum to one. Uniform when no point has a
    foreign neighbour."""
    rows = _class_rows(ds, class_i, 2)
    k = min(k, ds.n_samples - 1)
    _, nb = cKDTree(ds.features).query(ds.features[rows], k=k + 1)
    ratios = np.empty(len(rows))
    for i, (r, cand) in enumerate(zip(rows, nb)):
        cand = cand[cand != r][:k]
        ratios[i] = np.mean(ds.labels[cand] != class_i)
    if ratios.sum() == 0:
        log.warning("class %d: no point has a foreign neighbour; ADASYN falls back to uniform weights", class_i)
        return np.full(len(rows), 1.0 / len(rows))
    return ratios / ratios.sum()


def adasyn_records(ds: Dataset, class_i: int, cfg: BaselineConfig, seed: int = 0, majority_size=None):
    rows = _class_rows(ds, class_i, 2)
    if majority_size is None:
        majority_size = int(ds.class_counts().max())
    g = int(round(cfg.adasyn_beta * max(0, majority_size - len(rows))))
    w = adasyn_weights(ds, class_i, cfg.k_neighbors)
    if g == 0:
        return [], w
    counts = _largest_remainder(w, g, list(range(len(rows))))
    rng = derive_rng(seed, "adasyn", class_i)
    nb = _same_class_neighbours(ds, rows, cfg.k_neighbors)
    seeds = np.repeat(np.arange(len(rows)), counts)
    return _interpolate(ds, class_i, seeds, nb, rng), w


def adasyn(ds: Dataset, class_i: int, cfg: BaselineConfig, seed: int = 0, majority_size=None) -> BaselineResult:
    """Adaptive synthetic sampling toward ``beta`` times the majority size."""
    recs, w = adasyn_records(ds, class_i, cfg, seed, majority_size)
    return BaselineResult(_append(ds, recs), recs, weights=w)


def ros(ds: Dataset, class_i: int, target: int, seed: int = 0) -> BaselineResult:
    """Duplicate uniformly chosen rows of ``class_i`` until it has ``target`` rows."""
    rows = _class_rows(ds, class_i, 1)
    if target < len(rows):
        raise BaselineError(f"ROS target {target} below class size {len(rows)}")
    rng = derive_rng(seed, "ros", class_i)
    pick = rows[rng.integers(len(rows), size=target - len(rows))]
    recs = [SyntheticRecord(ds.features[r].copy(), class_i, int(r), int(r), 0.0, ()) for r in pick]
    return BaselineResult(_append(ds, recs), recs)


def rus(ds: Dataset, class_i: int, target: int, seed: int = 0) -> BaselineResult:
    """Keep a uniform sample of ``target`` rows of ``class_i``; other classes
    and the row order are untouched."""
    rows = _class_rows(ds, class_i, 1)
    if not 1 <= target <= len(rows):
        raise BaselineError(f"RUS target {target} outside [1, {len(rows)}]")
    rng = derive_rng(seed, "rus", class_i)
    keep = rng.choice(len(rows), target, replace=False)
    rejected = np.setdiff1d(rows, rows[keep])
    mask = np.ones(ds.n_samples, dtype=bool)
    mask[rejected] = False
    return BaselineResult(ds.subset(np.flatnonzero(mask)), [], rejected)
