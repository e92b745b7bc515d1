"""Gaussian mixture regression used as a classifier.

A full-covariance mixture is fitted by EM to joint vectors ``[x; y]`` where
``y`` is the class value. A query ``x`` is mapped to the posterior mean of
``y`` and then to the nearest class value.

The ridge is applied as a floor ``reg`` on the eigenvalues of each component
covariance. The floored matrix is the exact maximiser of the M-step objective
over covariances whose eigenvalues are at least ``reg``, and the current
parameters always lie in that set, so the log-likelihood never decreases
between iterations. A covariance whose eigenvalues all exceed ``reg`` is left
as the weighted sample covariance.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from gicaps.clustering import kmeans
from gicaps.dataset import Dataset
from gicaps.rng import derive_seed

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
COLLAPSE_WEIGHT = 1e-8
MONOTONE_TOL = 1e-9
MAX_RESEEDS = 3
_LOG_TINY = np.log(np.finfo(float).tiny)


class GmrError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GmrModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D+1)
    covariances: np.ndarray  # (K, D+1, D+1)
    class_values: np.ndarray  # (C,) increasing
    reg: float
    loglik_history: list = field(default_factory=list)  # per-sample mean
    restarts: list = field(default_factory=lambda: [0])
    converged: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w <= 0):
            raise GmrError("mixture weights must be positive and sum to one")
        if np.any(np.diff(self.class_values) <= 0):
            raise GmrError("class values must be strictly increasing")
        for s in self.covariances:
            np.linalg.cholesky(s)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def n_features(self) -> int:
        return self.means.shape[1] - 1

    # partitioned blocks
    @property
    def mu_x(self):
        return self.means[:, :-1]

    @property
    def mu_y(self):
        return self.means[:, -1]

    @property
    def sigma_x(self):
        return self.covariances[:, :-1, :-1]

    @property
    def sigma_xy(self):
        return self.covariances[:, -1, :-1]

    @property
    def sigma_y(self):
        return self.covariances[:, -1, -1]


def _log_gauss(z, mean, cov):
    """Log density of rows of ``z`` under N(mean, cov), plus the squared
    Mahalanobis distances."""
    chol = np.linalg.cholesky(cov)
    w = solve_triangular(chol, (z - mean).T, lower=True)
    maha = (w**2).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (len(mean) * np.log(2 * np.pi) + logdet + maha), maha


def _component_logs(z, weights, means, covs):
    out = np.empty((len(z), len(weights)))
    for k in range(len(weights)):
        out[:, k] = np.log(weights[k]) + _log_gauss(z, means[k], covs[k])[0]
    return out


def _m_step(z, resp, reg):
    n, d = z.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = (resp.T @ z) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        c = z - means[k]
        s = (resp[:, k, None] * c).T @ c / nk[k]
        covs[k] = floor_eigenvalues(s, reg)
    return weights, means, covs


def floor_eigenvalues(s, reg):
    """Nearest covariance (same eigenvectors) with every eigenvalue >= reg."""
    s = 0.5 * (s + s.T)
    lam, vec = np.linalg.eigh(s)
    if lam[0] >= reg:
        return s
    return (vec * np.maximum(lam, reg)) @ vec.T


def _joint(ds: Dataset, class_values):
    y = np.asarray(class_values, dtype=float)[ds.labels]
    return np.column_stack([ds.features, y])


def fit(ds: Dataset, K: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-6,
        class_values=None, n_classes: int | None = None) -> GmrModel:
    """Fit a K-component GMM to ``[features; class value]`` by EM.

    Parameters
    ----------
    ds : Dataset
    K : int
        Number of components; must be below the number of rows.
    seed : int
        Seeds the k-means initialisation on the joint space.
    tol : float
        Stop once the per-sample log-likelihood gains less than ``tol``.
    class_values : array_like, optional
        Increasing encodings of class ids; defaults to ``0, 1, ..., C-1``.
    n_classes : int, optional
        Number of classes when the training rows miss some of them.
    """
    n = ds.n_samples
    if not 1 <= K < n:
        raise GmrError(f"K={K} must lie in [1, N) with N={n}")
    c = max(ds.n_classes, n_classes or 0)
    values = np.arange(c, dtype=float) if class_values is None else np.asarray(class_values, dtype=float)
    if len(values) < c:
        raise GmrError("fewer class values than classes")
    z = _joint(ds, values)
    d = z.shape[1]
    scale = float(np.mean(np.var(z, axis=0)))
    reg = 1e-6 * scale if scale > 0 else 1e-6

    init = kmeans(z, K, seed=derive_seed(seed, "gmr-init"))
    resp = np.zeros((n, K))
    resp[np.arange(n), init.assignments] = 1.0
    # an empty k-means cluster (only possible with duplicate rows) gets a share
    resp[:, resp.sum(axis=0) == 0] = 1.0 / n
    weights, means, covs = _m_step(z, resp, reg)

    lls = []
    segments = [0]  # history positions where a re-seed restarted EM
    reseeds = 0
    converged = False
    for it in range(max_iter + 1):
        logs = _component_logs(z, weights, means, covs)
        norm = logsumexp(logs, axis=1)
        ll = float(norm.mean())
        if len(lls) > segments[-1] and ll < lls[-1] - MONOTONE_TOL:
            raise AssertionError(f"EM log-likelihood decreased at iteration {it}: {lls[-1]!r} -> {ll!r}")
        done = len(lls) > segments[-1] and ll - lls[-1] < tol
        lls.append(ll)
        if done:
            converged = True
            break
        if it == max_iter:
            break
        resp = np.exp(logs - norm[:, None])
        weights, means, covs = _m_step(z, resp, reg)
        weak = np.flatnonzero(weights < COLLAPSE_WEIGHT)
        if len(weak):
            if reseeds < MAX_RESEEDS:
                reseeds += 1
                weights, means, covs = _reseed(z, weak, weights, means, covs, norm)
            else:
                log.warning("EM: dropping %d component(s) that keep collapsing", len(weak))
                keep = np.setdiff1d(np.arange(len(weights)), weak)
                weights, means, covs = weights[keep] / weights[keep].sum(), means[keep], covs[keep]
            segments.append(len(lls))
    return GmrModel(weights, means, covs, values, reg, lls, segments, converged)


def _reseed(z, weak, weights, means, covs, norm):
    """Move collapsed components onto the worst explained points, with the
    average shape of the surviving components."""
    log.warning("EM: %d component(s) collapsed; re-seeding at poorly explained points", len(weak))
    order = np.argsort(norm, kind="stable")
    alive = np.setdiff1d(np.arange(len(weights)), weak)
    shape = np.average(covs[alive], axis=0, weights=weights[alive]) if len(alive) else covs[0]
    weights = weights.copy()
    means = means.copy()
    covs = covs.copy()
    for i, k in enumerate(weak):
        means[k] = z[order[i]]
        covs[k] = shape
        weights[k] = 1.0 / len(weights)
    weights /= weights.sum()
    return weights, means, covs


def monotone_segments(model: GmrModel):
    """Log-likelihood runs between re-seeds; each must be non-decreasing."""
    bounds = list(model.restarts) + [len(model.loglik_history)]
    return [model.loglik_history[a:b] for a, b in zip(bounds, bounds[1:])]


def responsibilities(model: GmrModel, x) -> np.ndarray:
    """h(k) for each row of ``x`` from the marginal density of x."""
    h, _ = _responsibilities(model, np.atleast_2d(np.asarray(x, dtype=float)))
    return h


def _responsibilities(model, x):
    logs = np.empty((len(x), model.K))
    maha = np.empty((len(x), model.K))
    for k in range(model.K):
        lg, mh = _log_gauss(x, model.mu_x[k], model.sigma_x[k])
        logs[:, k] = np.log(model.weights[k]) + lg
        maha[:, k] = mh
    top = logs.max(axis=1)
    h = np.exp(logs - top[:, None])
    h /= h.sum(axis=1, keepdims=True)
    under = top < _LOG_TINY
    if np.any(under):
        log.warning("%d query point(s) underflow every component; using the nearest component", int(under.sum()))
        h[under] = 0.0
        h[under, np.argmin(maha[under], axis=1)] = 1.0
    return h, under


def predict_value(model: GmrModel, x) -> np.ndarray:
    """Posterior mean of y for each row of ``x`` (a 1-D input gives a scalar)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    h, _ = _responsibilities(model, x)
    cond = np.empty((len(x), model.K))
    for k in range(model.K):
        fac = cho_factor(model.sigma_x[k], lower=True)
        gain = cho_solve(fac, model.sigma_xy[k])
        cond[:, k] = model.mu_y[k] + (x - model.mu_x[k]) @ gain
    y = (h * cond).sum(axis=1)
    return float(y[0]) if single else y


def value_to_class(model: GmrModel, y) -> np.ndarray:
    """Nearest class value; ties go to the smaller class id."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.argmin(np.abs(y[:, None] - model.class_values[None, :]), axis=1)


def predict_class(model: GmrModel, x):
    x = np.asarray(x, dtype=float)
    out = value_to_class(model, predict_value(model, np.atleast_2d(x)))
    return int(out[0]) if x.ndim == 1 else out


def n_parameters(K: int, dim: int) -> int:
    return (K - 1) + K * dim + K * dim * (dim + 1) // 2


def bic(model: GmrModel, ds: Dataset) -> float:
    z = _joint(ds, model.class_values)
    ll = logsumexp(_component_logs(z, model.weights, model.means, model.covariances), axis=1).sum()
    return float(-2.0 * ll + n_parameters(model.K, z.shape[1]) * np.log(len(z)))


def select_k_bic(ds: Dataset, k_values, seed: int = 0, **fit_kw):
    """Smallest-BIC component count; ties go to the smaller K."""
    scores = {}
    for k in sorted(int(k) for k in k_values):
        scores[k] = bic(fit(ds, k, seed=seed, **fit_kw), ds)
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dumps(model: GmrModel) -> str:
    """Plain-text form; every real has 17 significant digits so a reload
    reproduces the model bit for bit."""
    d = model.means.shape[1]
    lines = [
        f"gicaps-gmr {FORMAT_VERSION}",
        f"components {model.K}",
        f"dim {d}",
        f"reg {_fmt([model.reg])}",
        f"class_values {_fmt(model.class_values)}",
    ]
    for k in range(model.K):
        lines.append(f"weight {_fmt([model.weights[k]])}")
        lines.append(f"mean {_fmt(model.means[k])}")
        for row in model.covariances[k]:
            lines.append(f"cov {_fmt(row)}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> GmrModel:
    rows = [ln.split() for ln in io.StringIO(text) if ln.strip()]
    if not rows or rows[0][0] != "gicaps-gmr":
        raise GmrError("not a serialized GMR model")
    if int(rows[0][1]) != FORMAT_VERSION:
        raise GmrError(f"unsupported model format version {rows[0][1]}")
    head = {r[0]: r[1:] for r in rows[1:5]}
    K, d = int(head["components"][0]), int(head["dim"][0])
    reg = float(head["reg"][0])
    values = np.array(head["class_values"], dtype=float)
    body = rows[5:]
    per = 2 + d
    if len(body) != K * per:
        raise GmrError("truncated model file")
    weights = np.empty(K)
    means = np.empty((K, d))
    covs = np.empty((K, d, d))
    for k in range(K):
        block = body[k * per:(k + 1) * per]
        weights[k] = float(block[0][1])
        means[k] = np.array(block[1][1:], dtype=float)
        covs[k] = np.array([r[1:] for r in block[2:]], dtype=float)
    return GmrModel(weights, means, covs, values, reg, converged=True)


def save(model: GmrModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(model))


def load(path) -> GmrModel:
    with open(path) as fh:
        return loads(fh.read())
