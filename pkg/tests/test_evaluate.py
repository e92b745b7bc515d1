import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gicaps.dataset import Dataset, generate_shell_data, normalize_minmax
from gicaps.evaluate import (
    ClassifierSpec,
    EvaluateError,
    compute_metrics,
    g_mean,
    margin_ablation,
    margin_study,
    oversample_for_margin,
    pca_project,
    report_json,
    report_table,
    run_cv,
)
from gicaps.resample import ResampleSpec


def test_g_mean_identity_from_table_row():
    assert g_mean(96.80, 95.99) == pytest.approx(96.39, abs=0.01)


def test_perfect_diagonal():
    m = compute_metrics(np.diag([5, 7, 2]))
    assert (m.oa, m.precision, m.recall, m.f_measure, m.g_mean) == (100.0, 100.0, 100.0, 100.0, 100.0)


def test_never_predicted_class(caplog):
    with caplog.at_level(logging.WARNING):
        m = compute_metrics([[5, 0], [5, 0]])
    assert "never-predicted" in caplog.text
    # precision: class 0 = 5/10, class 1 undefined -> 0; recall: 1 and 0
    assert m.oa == 50.0
    assert m.precision == pytest.approx(25.0)
    assert m.recall == pytest.approx(50.0)
    assert m.f_measure == pytest.approx(100.0 * (2 * 0.5 * 1.0 / 1.5) / 2)
    assert m.g_mean == pytest.approx(math.sqrt(25.0 * 50.0))


def test_absent_classes_are_ignored():
    cm = np.array([[3, 1, 0], [0, 4, 0], [0, 0, 0]])
    m = compute_metrics(cm)
    assert m.recall == pytest.approx(100 * (0.75 + 1.0) / 2)
    assert m.precision == pytest.approx(100 * (1.0 + 0.8) / 2)


def test_metric_errors():
    with pytest.raises(EvaluateError):
        compute_metrics(np.zeros((2, 2)))
    with pytest.raises(EvaluateError):
        compute_metrics(np.ones((2, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_metrics_invariant_under_relabelling(c, seed):
    rng = np.random.default_rng(seed)
    cm = rng.integers(0, 20, size=(c, c))
    cm[0, 0] += 1
    perm = rng.permutation(c)
    a = compute_metrics(cm)
    b = compute_metrics(cm[np.ix_(perm, perm)])
    for k in ("oa", "precision", "recall", "f_measure", "g_mean"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-9)
        assert 0.0 <= getattr(a, k) <= 100.0
    assert a.g_mean == pytest.approx(math.sqrt(a.precision * a.recall), abs=1e-9)


def separable(n=60):
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0, 0.3, (n, 2)), rng.normal(5, 0.3, (n, 2))])
    return Dataset(x, np.repeat([0, 1], n))


def test_cv_separable_identity():
    rep = run_cv(separable(), ResampleSpec("none"), ClassifierSpec(K=2), k_folds=5, seed=0)
    assert rep.oa == pytest.approx(100.0)
    assert rep.confusion.sum() == 120
    assert len(rep.per_fold) == 5


def test_cv_deterministic_and_parallel_equal():
    ds = separable()
    spec = ResampleSpec("smote")
    a = run_cv(ds, spec, ClassifierSpec(K=2), 4, seed=3)
    b = run_cv(ds, spec, ClassifierSpec(K=2), 4, seed=3, jobs=2)
    assert report_json([a]) == report_json([b])


def test_cv_rejected_rows_join_test():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal(0, 1, (200, 3)), rng.normal(4, 1, (20, 3))])
    ds = Dataset(x, np.repeat([0, 1], [200, 20]))
    rep = run_cv(ds, ResampleSpec("gicaps-u", n_target=50), ClassifierSpec(K=2), k_folds=5, seed=0)
    # each fold trains on 160 majority rows and keeps 50 of them
    assert all(f["n_rejected_to_test"] == 110 for f in rep.per_fold)
    assert rep.confusion.sum() == 220 + 5 * 110
    assert rep.confusion[0].sum() == 200 + 5 * 110


def test_margin_constructed_gap():
    a = np.array([[0.0, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0]])
    b = a + np.array([3.0, 0.5, 0, 0, 0])
    ds = Dataset(np.vstack([a, b]), np.repeat([0, 1], 3))
    want = min(np.linalg.norm(p - q) for p in a for q in b)
    assert margin_ablation(ds, 0, 1, n_pca=4) == pytest.approx(want, abs=1e-9)


def test_margin_zero_when_shared():
    x = np.array([[0.0, 0, 0, 0], [1, 2, 0, 1], [1, 2, 0, 1], [3, 1, 1, 0]])
    assert margin_ablation(Dataset(x, np.array([0, 0, 1, 1])), 0, 1, 4) == 0.0


def test_pca_sign_and_order():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 4)) * [5.0, 2.0, 1.0, 0.1]
    z = pca_project(x, 2)
    assert z[:, 0].var() > z[:, 1].var()
    # the scores reproduce the centred data's projection on the leading axes
    lam, vec = np.linalg.eigh(np.cov(x, rowvar=False))
    v0 = vec[:, -1] * np.sign(vec[np.argmax(np.abs(vec[:, -1])), -1])
    assert np.allclose(z[:, 0], (x - x.mean(0)) @ v0)
    with pytest.raises(EvaluateError):
        pca_project(x, 5)


def test_report_outputs():
    rep = run_cv(separable(), ResampleSpec("none"), ClassifierSpec(K=2), k_folds=3, seed=0, name="sep")
    doc = json.loads(report_json([rep], {"seed": 0}))
    assert doc["schema"] == "gicaps-report" and doc["version"] == 1
    assert len(doc["records"]) == 3
    table = report_table([rep])
    assert table.splitlines()[0].split() == ["Dataset", "Method", "OA", "Precision", "Recall", "F-measure", "G-Mean"]
    assert "sep" in table


def test_margin_study_equal_budgets():
    ds, _ = normalize_minmax(generate_shell_data(1))
    for m in ("gicaps-o", "smote", "adasyn"):
        out = oversample_for_margin(ds, 1, m, 90, seed=1)
        assert out.class_counts().tolist() == [400, 120]
    res = margin_study(ds, 1, 0, 90, ("none", "gicaps-o", "smote"), n_pca=4, seed=1)
    # adding minority points can only shrink the closest cross-class pair
    assert res["gicaps-o"] <= res["none"] and res["smote"] <= res["none"]
    assert res["none"] == pytest.approx(margin_ablation(ds, 1, 0, 4))
    with pytest.raises(EvaluateError):
        oversample_for_margin(ds, 1, "smote", 7)
