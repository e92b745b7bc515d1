"""Oversampling that keeps synthetic points out of other classes' territory.

For every point ``x_m`` of a class, segments are drawn to its nearest
same-class neighbours ``x_v``. Points of other classes near the segment,
paired with their own nearest neighbours, act as local boundary pieces; where
such a boundary passes close to the segment it is forbidden (the no man's
land). Synthetic counts are spread over segments in proportion to their free
length and placed only in the free part of each segment.

Row indices in budgets and provenance records refer to rows of the input
dataset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from gicaps.clustering import kmeans
from gicaps.dataset import Dataset
from gicaps.geometry import NoMansLand, SegmentFrame, crossings_batch, nml_from_params
from gicaps.rng import derive_rng

log = logging.getLogger(__name__)

MAX_REDRAWS = 10
TOPUP_ROUNDS = 5


class OversampleError(ValueError):
    pass


@dataclass(frozen=True)
class OversampleConfig:
    h_target: dict = field(default_factory=dict)
    kappa_same: int = 5
    lambda_v: float = 2.0
    kappa_q: int = 3
    tau_cross_rel: float = 0.1
    rho: float = 0.9
    noise_rel: float = 0.01
    pre_cluster: bool = False
    pre_cluster_k: int = 2

    def __post_init__(self):
        for name in ("kappa_same", "kappa_q", "pre_cluster_k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.lambda_v < 0 or self.tau_cross_rel < 0 or self.noise_rel < 0:
            raise ValueError("lambda_v, tau_cross_rel and noise_rel must be non-negative")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        for c, h in self.h_target.items():
            if int(h) < 0:
                raise ValueError(f"h_target[{c}] must be non-negative")


@dataclass
class SegmentBudget:
    m_index: int
    v_index: int
    free_length: float
    count: int
    nml: NoMansLand


@dataclass(frozen=True)
class SyntheticRecord:
    point: np.ndarray
    class_id: int
    m_index: int
    v_index: int
    param: float
    intervals: tuple


@dataclass
class OversampleResult:
    dataset: Dataset
    records: list
    budgets: dict  # class id -> list of SegmentBudget
    dropped: dict  # class id -> points that could not be placed

    @property
    def n_synthetic(self) -> int:
        return len(self.records)


class _Index:
    """Per-class KD-trees and the median nearest-neighbour distance."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self.trees = {}
        for c, rows in ds.class_index.items():
            if len(rows):
                self.trees[c] = cKDTree(ds.features[rows])
        self._nn = {}

    def median_nn(self, c) -> float:
        if c not in self._nn:
            rows = self.ds.class_index[c]
            d, _ = self.trees[c].query(self.ds.features[rows], k=2)
            self._nn[c] = float(np.median(d[:, 1]))
        return self._nn[c]


def _neighbours_within(x, rows, m_index, k):
    """Up to ``k`` nearest rows to ``x[m_index]`` among ``rows``, skipping the
    point itself and exact copies of it."""
    pts = x[rows]
    d = np.linalg.norm(pts - x[m_index], axis=1)
    order = np.lexsort((rows, d))
    keep = [rows[i] for i in order if rows[i] != m_index and d[i] > 0]
    return keep[:k]


def build_neighborhood(ds: Dataset, class_i: int, m_index: int, cfg: OversampleConfig,
                       index: _Index | None = None, group=None):
    """Same-class segment partners of ``x_m`` and nearby points of other classes.

    The interferer region is a ball around the midpoint of ``x_m`` and its
    farthest partner. Its radius is half that distance plus ``lambda_v``
    times the class's median nearest-neighbour distance, so the ball always
    contains the segments it is meant to guard.

    Returns
    -------
    v_candidates : list of int
    pool : dict mapping class id to an array of rows
    """
    rows = ds.class_index.get(class_i, np.array([], dtype=np.int64))
    if len(rows) < 2:
        raise OversampleError("cannot oversample singleton class")
    index = index or _Index(ds)
    x = ds.features
    group = rows if group is None else np.asarray(group)
    v = _neighbours_within(x, group, m_index, cfg.kappa_same)
    pool = {}
    if not v:
        return v, pool
    far = x[v[-1]]
    center = 0.5 * (x[m_index] + far)
    radius = 0.5 * np.linalg.norm(far - x[m_index]) + cfg.lambda_v * index.median_nn(class_i)
    for c, tree in index.trees.items():
        if c == class_i:
            continue
        hit = tree.query_ball_point(center, radius)
        if hit:
            pool[c] = ds.class_index[c][np.sort(hit)]
    return v, pool


def _q_neighbours(ds: Dataset, index: _Index, c: int, r_rows, kappa_q):
    """kappa_q nearest class-c rows of each row in ``r_rows`` (self excluded)."""
    rows = ds.class_index[c]
    k = min(kappa_q + 1, len(rows))
    if k < 2:
        return [np.array([], dtype=np.int64) for _ in r_rows]
    _, nb = index.trees[c].query(ds.features[r_rows], k=k)
    out = []
    for r, cand in zip(r_rows, nb):
        got = rows[cand]
        out.append(got[got != r][:kappa_q])
    return out


def _pairs_for_pool(ds: Dataset, index: _Index, pool, cfg):
    """Candidate (t1, t2) rows for each pool point: its Q neighbours paired
    with itself. Computed once per x_m and filtered per segment."""
    pairs = {}
    for c, prow in pool.items():
        pairs[c] = (prow, _q_neighbours(ds, index, c, prow, cfg.kappa_q))
    return pairs


def segment_interference(ds: Dataset, f: SegmentFrame, pool, cfg: OversampleConfig,
                         index: _Index | None = None, pairs=None) -> NoMansLand:
    """No man's land of one segment from the interferer pool."""
    if not pool:
        return nml_from_params(f.len, [], cfg.rho)
    index = index or _Index(ds)
    pairs = pairs or _pairs_for_pool(ds, index, pool, cfg)
    x = ds.features
    unit = f.ab / f.len
    t1_rows, t2_rows = [], []
    for c, (prow, qs) in pairs.items():
        rel = x[prow] - f.a
        perp = np.linalg.norm(rel - np.outer(rel @ unit, unit), axis=1)
        for r, q, inside in zip(prow, qs, perp <= f.len):
            if inside and len(q):
                t1_rows.extend(q)
                t2_rows.extend([r] * len(q))
    if not t1_rows:
        return nml_from_params(f.len, [], cfg.rho)
    o, c_dist, valid = crossings_batch(f, x[t1_rows], x[t2_rows])
    hit = valid & (c_dist < cfg.tau_cross_rel * f.len)
    return nml_from_params(f.len, o[hit], cfg.rho)


def _largest_remainder(weights, total, keys):
    w = np.asarray(weights, dtype=float)
    quota = total * w / w.sum()
    base = np.floor(quota).astype(np.int64)
    rest = int(total - base.sum())
    if rest:
        rem = np.round(quota - base, 12)
        # larger remainder first, then the smaller key
        order = sorted(range(len(w)), key=lambda i: (-rem[i], keys[i]))
        for i in order[:rest]:
            base[i] += 1
    return base


def allocate_counts(budgets, h_i: int):
    """Set ``count`` on each budget so the counts sum to ``h_i``.

    Counts are proportional to free length; fractional parts go by largest
    remainder with ties to the smaller ``(m_index, v_index)``.
    """
    if h_i < 0:
        raise OversampleError("h_i must be non-negative")
    s = np.array([b.free_length for b in budgets], dtype=float)
    if np.any(s < 0):
        raise OversampleError("free lengths must be non-negative")
    if h_i == 0:
        for b in budgets:
            b.count = 0
        return budgets
    if len(s) == 0 or s.sum() <= 0:
        raise OversampleError(
            f"class fully enclosed by no man's land: {len(budgets)} segments, all with zero free length"
        )
    counts = _largest_remainder(s, h_i, [(b.m_index, b.v_index) for b in budgets])
    for b, n in zip(budgets, counts):
        b.count = int(n)
    return budgets


def _free_positions(nml: NoMansLand, count: int) -> np.ndarray:
    """``count`` parameters at uniform spacing over the free part of [0, 1]."""
    free = nml.free_intervals()
    lengths = np.array([hi - lo for lo, hi in free])
    total = lengths.sum()
    if count == 0 or total <= 0:
        return np.empty(0)
    pos = np.arange(1, count + 1) * total / (count + 1)
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    seg = np.clip(np.searchsorted(edges, pos, side="right") - 1, 0, len(free) - 1)
    s = np.array([free[j][0] for j in seg]) + (pos - edges[seg])
    # a position on a shared edge touches a closed forbidden interval
    for i in np.flatnonzero(nml.contains(s)):
        lo, hi = next((lo, hi) for lo, hi in nml.intervals if lo <= s[i] <= hi)
        s[i] = np.nextafter(hi, np.inf) if hi < 1.0 else np.nextafter(lo, -np.inf)
    return s


def interpolate(f: SegmentFrame, budget: SegmentBudget, cfg: OversampleConfig, rng):
    """Place ``budget.count`` points on the free part of the segment.

    Each point gets isotropic Gaussian noise of std ``noise_rel * |ab|``; a
    noisy point whose projection falls in the no man's land is redrawn up to
    ``MAX_REDRAWS`` times and dropped after that.

    Returns
    -------
    points : (n, D) array
    params : (n,) array of projection parameters
    dropped : int
    """
    base = _free_positions(budget.nml, budget.count)
    sd = cfg.noise_rel * f.len
    pts, params = [], []
    dropped = 0
    for s in base:
        p0 = f.point_at(s)
        for _ in range(MAX_REDRAWS):
            p = p0 + rng.normal(0.0, sd, size=p0.shape) if sd > 0 else p0
            t = float(f.param_of(p))
            if not budget.nml.contains(t):
                pts.append(p)
                params.append(t)
                break
        else:
            dropped += 1
    if dropped:
        log.warning("segment (%d, %d): dropped %d point(s) that kept landing in the no man's land",
                    budget.m_index, budget.v_index, dropped)
    dim = len(f.a)
    return np.reshape(np.array(pts), (-1, dim)), np.array(params), dropped


def _segment_budgets(ds, class_i, group, cfg, index):
    budgets = []
    frames = {}
    x = ds.features
    for m in group:
        v_rows, pool = build_neighborhood(ds, class_i, int(m), cfg, index, group)
        pairs = _pairs_for_pool(ds, index, pool, cfg) if pool else None
        for v in v_rows:
            f = SegmentFrame(x[m], x[v])
            nml = segment_interference(ds, f, pool, cfg, index, pairs)
            budgets.append(SegmentBudget(int(m), int(v), nml.free_length, 0, nml))
            frames[(int(m), int(v))] = f
    return budgets, frames


def _emit(budgets, frames, class_i, cfg, seed, tag):
    by_m = {}
    for b in budgets:
        by_m.setdefault(b.m_index, []).append(b)
    records = []
    dropped = 0
    for m in sorted(by_m):
        rng = derive_rng(seed, "oversample", class_i, m, *tag)
        for b in by_m[m]:
            if b.count == 0:
                continue
            f = frames[(b.m_index, b.v_index)]
            pts, params, d = interpolate(f, b, cfg, rng)
            dropped += d
            for p, t in zip(pts, params):
                records.append(SyntheticRecord(p, class_i, b.m_index, b.v_index, float(t), b.nml.intervals))
    return records, dropped


def _group_shares(ds, class_i, h_i, cfg, seed):
    rows = ds.class_index[class_i]
    if not cfg.pre_cluster:
        return [(rows, h_i)]
    k = min(cfg.pre_cluster_k, len(rows))
    clus = kmeans(ds.features[rows], k, seed=seed)
    groups = [rows[clus.members(c)] for c in range(clus.k)]
    groups = [g for g in groups if len(g) >= 2]
    if not groups:
        raise OversampleError(f"class {class_i}: every sub-cluster is a single point")
    # smaller sub-clusters receive more points
    w = np.array([1.0 / len(g) for g in groups])
    shares = _largest_remainder(w, h_i, [int(g[0]) for g in groups])
    return list(zip(groups, shares))


def default_h(ds: Dataset) -> dict:
    counts = ds.class_counts()
    top = int(counts.max())
    return {c: top - int(n) for c, n in enumerate(counts)}


def oversample_class(ds: Dataset, class_i: int, cfg: OversampleConfig, seed: int = 0,
                     index: _Index | None = None):
    """Synthetic points for one class.

    Returns
    -------
    records : list of SyntheticRecord
    budgets : list of SegmentBudget
    dropped : int
    """
    rows = ds.class_index.get(class_i, np.array([], dtype=np.int64))
    if len(rows) < 2:
        raise OversampleError("cannot oversample singleton class")
    h_i = int(cfg.h_target.get(class_i, default_h(ds)[class_i]))
    if h_i == 0:
        return [], [], 0
    index = index or _Index(ds)
    records, all_budgets = [], []
    dropped = 0
    for g, (group, share) in enumerate(_group_shares(ds, class_i, h_i, cfg, seed)):
        if share == 0:
            continue
        budgets, frames = _segment_budgets(ds, class_i, group, cfg, index)
        allocate_counts(budgets, int(share))
        recs, lost = _emit(budgets, frames, class_i, cfg, seed, (g,))
        # re-allocate dropped points over the same segments
        for rnd in range(TOPUP_ROUNDS):
            if lost == 0:
                break
            extra = [SegmentBudget(b.m_index, b.v_index, b.free_length, 0, b.nml) for b in budgets]
            allocate_counts(extra, lost)
            more, lost = _emit(extra, frames, class_i, cfg, seed, (g, "topup", rnd))
            recs.extend(more)
        if lost:
            log.warning("class %d: %d of %d synthetic points dropped", class_i, lost, share)
        records.extend(recs)
        all_budgets.extend(budgets)
        dropped += lost
    return records, all_budgets, dropped


def _append(ds: Dataset, records) -> Dataset:
    if not records:
        return ds
    new_x = np.array([r.point for r in records])
    new_y = np.array([r.class_id for r in records], dtype=np.int64)
    return Dataset(np.vstack([ds.features, new_x]), np.concatenate([ds.labels, new_y]),
                   ds.feature_names, ds.label_names)


def gicaps_oversample(ds: Dataset, class_i: int, cfg: OversampleConfig, seed: int = 0) -> OversampleResult:
    """Append synthetic rows for ``class_i``; original rows are untouched."""
    records, budgets, dropped = oversample_class(ds, class_i, cfg, seed)
    return OversampleResult(_append(ds, records), records, {class_i: budgets}, {class_i: dropped})


def gicaps_oversample_all(ds: Dataset, cfg: OversampleConfig, seed: int = 0) -> OversampleResult:
    """Oversample every class with a positive budget. Neighbourhoods are
    always taken from the original rows, never from synthetic ones."""
    h = default_h(ds)
    h.update({int(c): int(n) for c, n in cfg.h_target.items()})
    index = _Index(ds)
    records, budgets, dropped = [], {}, {}
    for c, n in enumerate(ds.class_counts()):
        if h.get(c, 0) == 0:
            continue
        if n < 2:
            log.warning("class %d has %d point(s); left as is", c, n)
            continue
        sub = OversampleConfig(**{**cfg.__dict__, "h_target": {c: h[c]}})
        recs, b, d = oversample_class(ds, c, sub, seed, index)
        records.extend(recs)
        budgets[c] = b
        dropped[c] = d
    return OversampleResult(_append(ds, records), records, budgets, dropped)


def nml_violations(records) -> int:
    """Number of records whose parameter lies inside one of its intervals."""
    bad = 0
    for r in records:
        if any(lo <= r.param <= hi for lo, hi in r.intervals):
            bad += 1
    return bad
