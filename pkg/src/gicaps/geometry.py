"""Vector geometry shared by the samplers.

Positions along a segment ``a -> b`` are parametric: ``0`` at ``a``, ``1`` at
``b``. No-man's-land intervals and crossing points are stored that way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


def angle(u, v) -> float:
    """Angle between two vectors in radians, in ``[0, pi]``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise GeometryError("undefined angle for a zero vector")
    c = float(np.dot(u, v) / (nu * nv))
    return float(np.arccos(min(1.0, max(-1.0, c))))


def angles_to(ref, points) -> np.ndarray:
    """Row-wise :func:`angle` between ``ref`` and each row of ``points``."""
    ref = np.asarray(ref, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nr = np.linalg.norm(ref)
    npts = np.linalg.norm(pts, axis=1)
    if nr == 0.0 or np.any(npts == 0.0):
        raise GeometryError("undefined angle for a zero vector")
    c = pts @ ref / (npts * nr)
    return np.arccos(np.clip(c, -1.0, 1.0))


@dataclass(frozen=True)
class OrthantCode:
    code: int
    dim: int


def orthant_code(ref, x) -> OrthantCode:
    """Sign pattern of ``x - ref`` as an integer; feature 0 is the most
    significant bit and a zero component counts as positive."""
    d = np.asarray(x, dtype=float) - np.asarray(ref, dtype=float)
    return OrthantCode(int(orthant_codes(np.zeros_like(d), d[None, :])[0]), d.size)


def orthant_codes(ref, points) -> np.ndarray:
    """Vectorised :func:`orthant_code` (plain integers) for each row."""
    bits = np.atleast_2d(points) - np.asarray(ref, dtype=float) >= 0
    dim = bits.shape[1]
    if dim < 63:
        weights = 1 << np.arange(dim - 1, -1, -1, dtype=np.int64)
        return bits.astype(np.int64) @ weights
    # wide data: Python integers do not overflow
    return np.array([int("".join("1" if b else "0" for b in row), 2) for row in bits], dtype=object)


@dataclass(frozen=True)
class SegmentFrame:
    a: np.ndarray
    b: np.ndarray
    ab: np.ndarray = field(init=False)
    len: float = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        ab = b - a
        length = float(np.linalg.norm(ab))
        if not length > 0.0:
            raise GeometryError("segment endpoints coincide")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "ab", ab)
        object.__setattr__(self, "len", length)

    def point_at(self, s):
        """Point(s) at parameter ``s``."""
        s = np.asarray(s, dtype=float)
        return self.a + s[..., None] * self.ab

    def param_of(self, pts):
        """Parameter of the orthogonal projection of each point."""
        pts = np.asarray(pts, dtype=float)
        return (pts - self.a) @ self.ab / (self.len**2)


def project_on_segment(f: SegmentFrame, t):
    """Projection of ``t - a`` onto the direction of ``ab``.

    Returns ``(p, perp)`` where ``p`` is in ``a``-origin coordinates and
    ``perp`` is the distance from ``t`` to the line through ``a`` and ``b``.
    """
    at = np.asarray(t, dtype=float) - f.a
    p = f.ab * (f.ab @ at) / (f.ab @ f.ab)
    return p, float(np.linalg.norm(at - p))


@dataclass(frozen=True)
class CrossingResult:
    o_param: float
    c_dist: float
    valid: bool


def _dist_to_line(point, origin, direction):
    """Distance from ``point`` to the line ``origin + s*direction``."""
    w = point - origin
    dd = direction @ direction
    if dd == 0.0:
        return float(np.linalg.norm(w))
    perp = w - direction * (direction @ w) / dd
    return float(np.linalg.norm(perp))


def crossing(f: SegmentFrame, t1, t2) -> CrossingResult:
    """Where the line through ``t1`` and ``t2`` meets ``ab``, and how close.

    The meeting point O divides the two projections in the ratio of the
    perpendicular distances of ``t1`` and ``t2`` to the line ``ab``. The
    crossing distance is the distance from O to the line ``t1 t2``
    (``|O t1| sin`` of the angle between ``O t1`` and ``t1 t2``).
    """
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    p1, d1 = project_on_segment(f, t1)
    p2, d2 = project_on_segment(f, t2)
    ll = f.ab @ f.ab
    if d1 + d2 == 0.0:
        # both on the line: treat as a touching boundary at the mean projection
        ao = 0.5 * (p1 + p2)
        o_param = float(ao @ f.ab / ll)
        return CrossingResult(o_param, 0.0, _on_segment(ao, f))
    ao = p1 + (p2 - p1) * (d1 / (d1 + d2))
    o_param = float(ao @ f.ab / ll)
    at1 = t1 - f.a
    at12 = t2 - t1
    c_dist = _dist_to_line(ao, at1, at12)
    return CrossingResult(o_param, c_dist, _on_segment(ao, f))


def _on_segment(ao, f):
    n = np.linalg.norm(ao)
    return bool(n < f.len and np.linalg.norm(f.ab - ao) < f.len)


def crossings_batch(f: SegmentFrame, t1, t2):
    """Vectorised :func:`crossing` over row-aligned arrays of pairs.

    Returns ``(o_param, c_dist, valid)`` arrays.
    """
    t1 = np.atleast_2d(np.asarray(t1, dtype=float))
    t2 = np.atleast_2d(np.asarray(t2, dtype=float))
    ll = f.ab @ f.ab
    at1 = t1 - f.a
    at2 = t2 - f.a
    s1 = at1 @ f.ab / ll
    s2 = at2 @ f.ab / ll
    d1 = np.linalg.norm(at1 - s1[:, None] * f.ab, axis=1)
    d2 = np.linalg.norm(at2 - s2[:, None] * f.ab, axis=1)
    den = d1 + d2
    degenerate = den == 0.0
    w = np.divide(d1, den, out=np.full_like(d1, 0.5), where=~degenerate)
    o = s1 + (s2 - s1) * w
    ao = o[:, None] * f.ab
    ot1 = ao - at1
    at12 = at2 - at1
    dd = np.einsum("ij,ij->i", at12, at12)
    coef = np.divide(np.einsum("ij,ij->i", ot1, at12), dd, out=np.zeros_like(dd), where=dd > 0)
    c = np.linalg.norm(ot1 - coef[:, None] * at12, axis=1)
    c[degenerate] = 0.0
    valid = (np.linalg.norm(ao, axis=1) < f.len) & (np.linalg.norm(f.ab - ao, axis=1) < f.len)
    return o, c, valid


@dataclass(frozen=True)
class NoMansLand:
    """Forbidden parameter intervals on a segment plus the free length used
    for quota allocation."""

    intervals: tuple[tuple[float, float], ...]
    free_length: float
    core: tuple[float, float] | None = None

    def contains(self, s) -> np.ndarray:
        """Closed-interval membership of parameter(s) ``s``."""
        s = np.asarray(s, dtype=float)
        inside = np.zeros(s.shape, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (s >= lo) & (s <= hi)
        return inside

    def free_intervals(self) -> list[tuple[float, float]]:
        """Complement of the forbidden intervals within ``[0, 1]``."""
        out = []
        cur = 0.0
        for lo, hi in self.intervals:
            if lo > cur:
                out.append((cur, lo))
            cur = max(cur, hi)
        if cur < 1.0:
            out.append((cur, 1.0))
        return out


def merge_intervals(intervals):
    merged: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((float(lo), float(hi)) for lo, hi in merged)


def nml_from_params(length: float, o_params, rho: float) -> NoMansLand:
    """No man's land from the parameters of the interfering crossings."""
    o_params = np.asarray(o_params, dtype=float)
    if o_params.size == 0:
        return NoMansLand((), rho * length)
    lo = float(o_params.min())
    hi = float(o_params.max())
    pad = 0.5 * (1.0 - rho)
    interval = (max(0.0, lo - pad), min(1.0, hi + pad))
    free = rho * (length - (hi - lo) * length)
    return NoMansLand(merge_intervals([interval]), max(0.0, free), (lo, hi))


def build_no_mans_land(f: SegmentFrame, interferers, tau_cross: float, rho: float) -> NoMansLand:
    """Collect the valid crossings closer than ``tau_cross`` and turn their
    extent into a forbidden interval.

    The interval runs from the nearest to the farthest crossing (seen from
    ``a``), widened by ``(1 - rho) / 2`` of the segment on each side. The free
    length is ``rho * (len - |O_max - O_min|)``.
    """
    if not 0.0 < rho <= 1.0:
        raise GeometryError("rho must lie in (0, 1]")
    if tau_cross < 0:
        raise GeometryError("tau_cross must be non-negative")
    pairs = list(interferers)
    if not pairs:
        return NoMansLand((), rho * f.len)
    t1 = np.array([p[0] for p in pairs], dtype=float)
    t2 = np.array([p[1] for p in pairs], dtype=float)
    o, c, valid = crossings_batch(f, t1, t2)
    hit = valid & (c < tau_cross)
    return nml_from_params(f.len, o[hit], rho)
