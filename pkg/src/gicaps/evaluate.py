"""Metrics, cross-validated benchmarking and the two-class margin ablation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from gicaps import gmr
from gicaps.baselines import BaselineConfig, adasyn, smote
from gicaps.dataset import Dataset, normalize_minmax, stratified_kfold
from gicaps.oversample import OversampleConfig, gicaps_oversample
from gicaps.resample import ResampleSpec, resample
from gicaps.rng import derive_seed

log = logging.getLogger(__name__)

REPORT_SCHEMA = "gicaps-report"
REPORT_VERSION = 1
METRIC_FIELDS = ("oa", "precision", "recall", "f_measure", "g_mean")


class EvaluateError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    oa: float
    precision: float
    recall: float
    f_measure: float
    g_mean: float


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth), np.asarray(pred)), 1)
    return cm


def g_mean(precision: float, recall: float) -> float:
    return math.sqrt(precision * recall)


def compute_metrics(confusion) -> Metrics:
    """Table-style metrics on a 0-100 scale from a confusion matrix whose
    rows are true classes.

    Precision, recall and F are macro averages over the classes that occur
    in the test rows. A class never predicted has precision 0 (warned).
    G-mean is the geometric mean of macro precision and macro recall.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise EvaluateError("confusion matrix must be square")
    if np.any(cm < 0):
        raise EvaluateError("confusion matrix has negative entries")
    total = cm.sum()
    if total == 0:
        raise EvaluateError("confusion matrix is empty")
    present = np.flatnonzero(cm.sum(axis=1) > 0)
    tp = np.diag(cm).astype(float)
    col = cm.sum(axis=0).astype(float)
    row = cm.sum(axis=1).astype(float)
    p = np.zeros(len(cm))
    predicted = col > 0
    p[predicted] = tp[predicted] / col[predicted]
    never = [int(c) for c in present if not predicted[c]]
    if never:
        log.warning("precision undefined for never-predicted class(es) %s; counted as 0", never)
    r = np.zeros(len(cm))
    r[present] = tp[present] / row[present]
    denom = p + r
    f1 = np.where(denom > 0, 2 * p * r / np.where(denom > 0, denom, 1.0), 0.0)
    P = 100.0 * p[present].mean()
    R = 100.0 * r[present].mean()
    return Metrics(
        oa=100.0 * np.trace(cm) / total,
        precision=P,
        recall=R,
        f_measure=100.0 * f1[present].mean(),
        g_mean=g_mean(P, R),
    )


@dataclass(frozen=True)
class ClassifierSpec:
    K: int = 3
    max_iter: int = 200
    tol: float = 1e-6


@dataclass
class EvalReport:
    dataset: str
    method: str
    confusion: np.ndarray
    oa: float
    precision: float
    recall: float
    f_measure: float
    g_mean: float
    per_fold: list = field(default_factory=list)  # list of dicts
    seed: int = 0

    def summary(self) -> dict:
        return {"dataset": self.dataset, "method": self.method, "seed": self.seed,
                **{k: getattr(self, k) for k in METRIC_FIELDS},
                "confusion": np.asarray(self.confusion).tolist()}


def _run_fold(ds: Dataset, train, test, spec: ResampleSpec, clf: ClassifierSpec, seed: int, fold: int):
    train_ds, norm = normalize_minmax(ds.subset(train))
    test_ds = norm.apply(ds.subset(test))
    fseed = derive_seed(seed, "fold", fold)
    out = resample(train_ds, spec, seed=fseed)
    # synthetic rows only ever come from training rows of this fold
    sources = {int(train[r.m_index]) for r in out.records} | {int(train[r.v_index]) for r in out.records}
    if sources & set(int(t) for t in test):
        raise AssertionError("synthetic data derived from test rows")
    rej = out.rejected
    x_test = np.vstack([test_ds.features, train_ds.features[rej]])
    y_test = np.concatenate([test_ds.labels, train_ds.labels[rej]])
    model = gmr.fit(out.dataset, clf.K, seed=fseed, max_iter=clf.max_iter, tol=clf.tol,
                    n_classes=ds.n_classes)
    pred = gmr.predict_class(model, x_test)
    cm = confusion_matrix(y_test, pred, ds.n_classes)
    return cm, {"fold": fold, "n_train": int(out.dataset.n_samples), "n_synthetic": out.n_synthetic,
                "n_test": int(len(test)), "n_rejected_to_test": int(len(rej))}


def _fold_task(args):
    return _run_fold(*args)


def run_cv(ds: Dataset, spec: ResampleSpec, clf: ClassifierSpec = ClassifierSpec(), k_folds: int = 10,
           seed: int = 0, name: str = "dataset", jobs: int = 1) -> EvalReport:
    """Stratified k-fold evaluation with resampling on training folds only.

    Rows removed by undersampling in a fold join that fold's test rows.
    Reported OA, precision, recall and F are fold means; the G-mean is
    computed from the mean precision and recall so the identity
    ``g = sqrt(p * r)`` holds for the report. The confusion matrix is pooled.
    """
    folds = stratified_kfold(ds, k_folds, seed)
    tasks = [(ds, tr, te, spec, clf, seed, f) for f, (tr, te) in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fold_task, tasks))
    else:
        results = [_fold_task(t) for t in tasks]
    pooled = np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64)
    per_fold = []
    for cm, info in results:
        pooled += cm
        per_fold.append({**info, **asdict(compute_metrics(cm)), "confusion": cm.tolist()})
    mean = {k: float(np.mean([f[k] for f in per_fold])) for k in ("oa", "precision", "recall", "f_measure")}
    return EvalReport(name, spec.method, pooled, mean["oa"], mean["precision"], mean["recall"],
                      mean["f_measure"], g_mean(mean["precision"], mean["recall"]), per_fold, seed)


def pca_project(x, n_components: int) -> np.ndarray:
    """Scores on the leading principal components (eigendecomposition of the
    covariance of the centred data); each component's largest-magnitude
    loading is positive."""
    x = np.asarray(x, dtype=float)
    if not 1 <= n_components <= x.shape[1]:
        raise EvaluateError(f"n_components={n_components} must lie in [1, {x.shape[1]}]")
    c = x - x.mean(axis=0)
    lam, vec = np.linalg.eigh(np.cov(c, rowvar=False).reshape(x.shape[1], x.shape[1]))
    order = np.argsort(lam, kind="stable")[::-1][:n_components]
    vec = vec[:, order]
    flip = np.sign(vec[np.argmax(np.abs(vec), axis=0), np.arange(n_components)])
    vec = vec * np.where(flip == 0, 1.0, flip)
    return c @ vec


def margin_ablation(ds: Dataset, class_a: int, class_b: int, n_pca: int = 4) -> float:
    """Smallest distance between a point of ``class_a`` and a point of
    ``class_b`` after projecting their union on ``n_pca`` components."""
    a = ds.features[ds.labels == class_a]
    b = ds.features[ds.labels == class_b]
    if len(a) == 0 or len(b) == 0:
        raise EvaluateError("both classes must be non-empty")
    z = pca_project(np.vstack([a, b]), n_pca)
    d, _ = cKDTree(z[len(a):]).query(z[: len(a)], k=1)
    return float(d.min())


MARGIN_METHODS = ("gicaps-o", "smote", "adasyn")


def oversample_for_margin(ds: Dataset, minority: int, method: str, n_new: int, seed: int = 0,
                          oversample: OversampleConfig | None = None, baseline: BaselineConfig | None = None) -> Dataset:
    """Add ``n_new`` synthetic points to ``minority`` with one method, so
    methods are compared at the same budget."""
    n = int(ds.class_counts()[minority])
    baseline = baseline or BaselineConfig()
    if method == "gicaps-o":
        cfg = dataclasses.replace(oversample or OversampleConfig(), h_target={minority: n_new})
        return gicaps_oversample(ds, minority, cfg, seed=seed).dataset
    if method == "smote":
        pct = 100 * n_new / n
        if pct != int(pct):
            raise EvaluateError(f"SMOTE budget {n_new} is not a whole percentage of {n}")
        cfg = dataclasses.replace(baseline, smote_percent=int(pct))
        return smote(ds, minority, cfg, seed=seed).dataset
    if method == "adasyn":
        gap = int(ds.class_counts().max()) - n
        if not 0 < n_new <= gap:
            raise EvaluateError(f"ADASYN budget {n_new} must lie in (0, {gap}]")
        cfg = dataclasses.replace(baseline, adasyn_beta=n_new / gap)
        return adasyn(ds, minority, cfg, seed=seed).dataset
    if method == "none":
        return ds
    raise EvaluateError(f"unsupported margin method {method!r}")


def margin_study(ds: Dataset, minority: int, other: int, n_new: int, methods=MARGIN_METHODS,
                 n_pca: int = 4, seed: int = 0, oversample=None, baseline=None) -> dict:
    """Cross-class margin after oversampling ``minority`` with each method."""
    two = ds.subset(np.flatnonzero((ds.labels == minority) | (ds.labels == other)))
    return {m: margin_ablation(oversample_for_margin(two, minority, m, n_new, seed, oversample, baseline),
                               minority, other, n_pca)
            for m in methods}


def report_records(reports) -> list:
    """One flat record per (dataset, method, fold)."""
    out = []
    for rep in reports:
        for f in rep.per_fold:
            out.append({"dataset": rep.dataset, "method": rep.method, "seed": rep.seed, **f})
    return out


def report_json(reports, header: dict | None = None) -> str:
    doc = {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "config": header or {},
        "summary": [r.summary() for r in reports],
        "records": report_records(reports),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def report_table(reports) -> str:
    cols = ("Dataset", "Method", "OA", "Precision", "Recall", "F-measure", "G-Mean")
    rows = [(r.dataset, r.method, *(f"{getattr(r, k):.2f}" for k in METRIC_FIELDS)) for r in reports]
    width = [max(len(str(x)) for x in col) for col in zip(cols, *rows)]
    lines = ["  ".join(str(x).ljust(w) if i < 2 else str(x).rjust(w) for i, (x, w) in enumerate(zip(row, width)))
             for row in [cols, *rows]]
    return "\n".join(lines) + "\n"
