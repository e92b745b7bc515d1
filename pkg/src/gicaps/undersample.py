"""Angle/orthant-constrained undersampling of a majority class.

Each K-medoids cluster is walked in order of increasing angle to its medoid.
A point is dropped when an already kept point of the same orthant (relative
to the medoid) lies within the cluster's threshold angle of it; the medoid
seeds every orthant. The threshold is rescaled per cluster until the number
of survivors fits the cluster's quota.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from gicaps.clustering import Clustering, kmedoids, select_k_elbow
from gicaps.geometry import angles_to, orthant_codes

log = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-6
# angles never exceed pi, so a threshold above it keeps only the medoid
_MAX_ALPHA = 4.0


@dataclass
class UndersampleConfig:
    n_target: int
    k_clusters: int | str = "auto"
    delta: float = 1.0
    dedupe_angle_eps: float = 1e-9
    k_max: int = 10

    def __post_init__(self):
        if int(self.n_target) < 1:
            raise ValueError("n_target must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.k_clusters != "auto":
            self.k_clusters = int(self.k_clusters)
            if self.k_clusters < 1:
                raise ValueError("k_clusters must be positive")
            if self.k_clusters > self.n_target:
                raise ValueError("k_clusters may not exceed n_target")


@dataclass
class ClusterAngularProfile:
    cluster_id: int
    medoid: np.ndarray
    members: np.ndarray
    thetas: np.ndarray
    sigma: float
    alpha: float
    quota: int = 0

    @property
    def spread(self) -> float:
        return float(self.thetas.max() - self.thetas.min()) if len(self.thetas) else 0.0


@dataclass
class UndersampleResult:
    retained: np.ndarray
    clustering: Clustering
    profiles: list[ClusterAngularProfile]
    effective_alpha: dict[int, float]
    audit: list[dict] = field(default_factory=list)


def _shift(points):
    # keeps every vector away from the origin once features sit in [0, 1]
    return np.asarray(points, dtype=float) + 1.0


def allocate_quotas(weights, total: int, caps) -> np.ndarray:
    """Integer quotas proportional to ``weights`` that sum to
    ``min(total, sum(caps))``, with ``1 <= quota <= cap`` per entry.

    Fractions are rounded by largest remainder, ties to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    caps = np.asarray(caps, dtype=np.int64)
    k = len(w)
    total = int(min(total, caps.sum()))
    if total < k:
        raise ValueError(f"cannot give each of {k} groups at least one of {total} slots")
    share = np.zeros(k)
    fixed = np.zeros(k, dtype=bool)
    for _ in range(2 * k + 1):
        left = total - share[fixed].sum()
        active = ~fixed
        wa = w[active]
        wa = np.ones_like(wa) if wa.sum() <= 0 else wa
        share[active] = left * wa / wa.sum()
        over = active & (share > caps)
        if over.any():
            share[over] = caps[over]
            fixed |= over
            continue
        under = active & (share < 1.0)
        if under.any():
            share[under] = 1.0
            fixed |= under
            continue
        break
    quota = np.floor(share + 1e-9).astype(np.int64)
    quota = np.minimum(quota, caps)
    rest = total - quota.sum()
    if rest > 0:
        frac = share - quota
        order = sorted(range(k), key=lambda i: (-frac[i], i))
        for i in order:
            if rest == 0:
                break
            if quota[i] < caps[i]:
                quota[i] += 1
                rest -= 1
    return quota


def angular_profile(points, clus: Clustering, cfg: UndersampleConfig, members=None) -> list[ClusterAngularProfile]:
    """Angles of cluster members to their medoid, the spread statistics and
    per-cluster quotas.

    ``members`` optionally overrides the membership lists (used after
    duplicate removal).
    """
    x = _shift(points)
    profiles = []
    for k in range(clus.k):
        rows = clus.members(k) if members is None else np.asarray(members[k])
        medoid = x[clus.center_indices[k]]
        thetas = angles_to(medoid, x[rows])
        thetas[rows == clus.center_indices[k]] = 0.0
        sigma = float(thetas.std())
        alpha = max(cfg.delta * sigma, ALPHA_FLOOR)
        profiles.append(ClusterAngularProfile(k, medoid - 1.0, rows, thetas, sigma, alpha))
    quotas = allocate_quotas([p.spread for p in profiles], cfg.n_target, [len(p.members) for p in profiles])
    for p, q in zip(profiles, quotas):
        p.quota = int(q)
    return profiles


def _dedupe(x_shifted, rows, medoid_row, eps):
    """Drop rows whose direction matches an earlier one within ``eps``
    radians; the medoid comes first, then ascending row index."""
    order = [medoid_row] + [r for r in rows if r != medoid_row]
    unit = x_shifted[order] / np.linalg.norm(x_shifted[order], axis=1, keepdims=True)
    # chord length 2 sin(eps / 2) equals eps to double precision for tiny eps
    pairs = cKDTree(unit).query_pairs(r=2 * np.sin(eps / 2) if eps > 0 else 0.0, output_type="ndarray")
    neighbours: dict[int, list[int]] = {}
    for i, j in pairs:
        neighbours.setdefault(int(i), []).append(int(j))
        neighbours.setdefault(int(j), []).append(int(i))
    kept_pos = []
    kept = set()
    dropped = []
    for pos in range(len(order)):
        if any(n in kept for n in neighbours.get(pos, ())):
            dropped.append(order[pos])
        else:
            kept.add(pos)
            kept_pos.append(order[pos])
    return np.array(sorted(kept_pos), dtype=np.int64), dropped


def _walk(thetas, codes, alpha):
    """One pass over points sorted by angle (medoid at position 0).

    Returns ``(keep, ref, gap)``; ``ref[i]`` is the position of the kept
    point that position ``i`` was compared with.
    """
    n = len(thetas)
    keep = np.zeros(n, dtype=bool)
    ref = np.full(n, -1, dtype=np.int64)
    gap = np.zeros(n)
    keep[0] = True
    last: dict = {}
    for i in range(1, n):
        j = last.get(codes[i], 0)
        ref[i] = j
        gap[i] = thetas[i] - thetas[j]
        if gap[i] > alpha:
            keep[i] = True
            last[codes[i]] = i
    return keep, ref, gap


def _fit_quota(thetas, codes, alpha, quota):
    """Rescale ``alpha`` so the walk keeps as many points as possible without
    exceeding ``quota``. Returns the walk and the alpha it used."""
    def count(a):
        return int(_walk(thetas, codes, a)[0].sum())

    c1 = count(alpha)
    if c1 == quota:
        return _walk(thetas, codes, alpha), alpha
    if c1 > quota:
        lo, hi = 1.0, 2.0
        while count(hi * alpha) > quota and hi * alpha < _MAX_ALPHA:
            lo, hi = hi, 2 * hi
    else:
        if count(0.0) <= quota:
            return _walk(thetas, codes, 0.0), 0.0
        lo, hi = 0.5, 1.0
        while count(lo * alpha) <= quota:
            lo, hi = lo / 2, lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if count(mid * alpha) > quota:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return _walk(thetas, codes, hi * alpha), hi * alpha


def gicaps_undersample(class_points, cfg: UndersampleConfig, seed: int = 0) -> UndersampleResult:
    """Reduce one class to ``cfg.n_target`` rows (or fewer when duplicates
    leave fewer distinct directions). Returns row positions into
    ``class_points``, sorted ascending."""
    x = np.atleast_2d(np.asarray(class_points, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("cannot undersample an empty class")
    xs = _shift(x)

    if cfg.k_clusters == "auto":
        k_hi = min(cfg.k_max, n, cfg.n_target)
        k = select_k_elbow(x, range(1, k_hi + 1), seed) if k_hi >= 3 else 1
    else:
        k = min(int(cfg.k_clusters), n)
    clus = kmedoids(x, k, seed)

    audit: list[dict] = []
    members = []
    for c in range(clus.k):
        rows, dropped = _dedupe(xs, clus.members(c), int(clus.center_indices[c]), cfg.dedupe_angle_eps)
        members.append(rows)
        for r in dropped:
            audit.append(dict(index=int(r), cluster=c, order=-1, ref=-1, theta=np.nan, theta_gap=np.nan,
                              orthant=-1, ref_orthant=-1, alpha=np.nan, reason="duplicate"))
    profiles = angular_profile(x, clus, cfg, members)

    retained = []
    eff_alpha = {}
    for p in profiles:
        med = int(clus.center_indices[p.cluster_id])
        codes = orthant_codes(x[med], x[p.members])
        order = sorted(range(len(p.members)), key=lambda i: (p.members[i] != med, p.thetas[i], p.members[i]))
        rows = p.members[order]
        thetas = p.thetas[order]
        codes = codes[order]
        (keep, ref, gap), a_eff = _fit_quota(thetas, codes, p.alpha, p.quota)
        eff_alpha[p.cluster_id] = a_eff
        reasons = np.where(keep, "kept", "rejected").astype(object)
        reasons[0] = "medoid"
        missing = p.quota - int(keep.sum())
        if missing > 0:
            # closest-rejected first: largest gap to its reference point
            cand = sorted(np.flatnonzero(~keep), key=lambda i: (-gap[i], rows[i]))
            for i in cand[:missing]:
                reasons[i] = "refill"
        for i in range(len(rows)):
            audit.append(dict(
                index=int(rows[i]), cluster=p.cluster_id, order=i,
                ref=int(rows[ref[i]]) if ref[i] >= 0 else -1,
                theta=float(thetas[i]), theta_gap=float(gap[i]),
                orthant=int(codes[i]), ref_orthant=int(codes[ref[i]]) if ref[i] >= 0 else -1,
                alpha=a_eff, reason=str(reasons[i]),
            ))
        retained.extend(int(r) for r, why in zip(rows, reasons) if why != "rejected")
    retained = np.array(sorted(retained), dtype=np.int64)
    return UndersampleResult(retained, clus, profiles, eff_alpha, audit)


def check_walk_invariant(audit: Sequence[dict], points, atol: float = 1e-12) -> list[str]:
    """Re-derive the pairwise rule from an audit trail.

    For every pair of consecutive walk survivors in a cluster, the recorded
    angle gap must exceed the cluster's effective alpha or the orthants
    (relative to the medoid) must differ. Recorded angles and orthants are
    also recomputed from ``points`` and must agree. Returns the list of
    violations; empty means the trail is sound.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    problems = []
    by_cluster: dict[int, list[dict]] = {}
    for row in audit:
        if row["reason"] in ("medoid", "kept"):
            by_cluster.setdefault(row["cluster"], []).append(row)
    for c, rows in sorted(by_cluster.items()):
        rows.sort(key=lambda r: r["order"])
        if rows[0]["reason"] != "medoid" or sum(r["reason"] == "medoid" for r in rows) != 1:
            problems.append(f"cluster {c}: walk does not start from a single medoid")
            continue
        m = rows[0]["index"]
        idx = [r["index"] for r in rows]
        th = angles_to(_shift(x[m]), _shift(x[idx]))
        th[0] = 0.0
        codes = orthant_codes(x[m], x[idx])
        alpha = rows[0]["alpha"]
        for i, r in enumerate(rows):
            if abs(th[i] - r["theta"]) > atol or codes[i] != r["orthant"]:
                problems.append(f"cluster {c}: row {r['index']} audit disagrees with its data")
        for prev, cur in zip(rows, rows[1:]):
            gap = cur["theta"] - prev["theta"]
            if not (gap > alpha or cur["orthant"] != prev["orthant"]):
                problems.append(
                    f"cluster {c}: rows {prev['index']} and {cur['index']} share orthant "
                    f"{cur['orthant']} with gap {gap:.3g} <= {alpha:.3g}"
                )
    return problems


def select_n_target_cv(ds, majority_class: int, candidates: Sequence[int], eval_fn: Callable[[int], float]) -> int:
    """Pick the retained-count target with the best cross-validated score.

    ``eval_fn(n_target)`` returns the mean CV G-mean; ties go to the smaller
    candidate.
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("no candidates")
    counts = ds.class_counts()
    major = counts[majority_class]
    others = [c for i, c in enumerate(counts) if i != majority_class]
    next_largest = max(others) if others else 0
    for c in cands:
        if not next_largest <= c < major:
            raise ValueError(f"candidate {c} outside [{next_largest}, {major})")
    if len(cands) == 1:
        return cands[0]
    best, best_score = cands[0], -np.inf
    for c in cands:
        score = float(eval_fn(c))
        log.info("n_target=%d -> score %.4f", c, score)
        if score > best_score:
            best, best_score = c, score
    return best
