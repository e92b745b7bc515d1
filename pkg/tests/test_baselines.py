import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from gicaps.baselines import (
    BaselineConfig,
    BaselineError,
    adasyn,
    adasyn_weights,
    ros,
    rus,
    smote,
)
from gicaps.dataset import Dataset, generate_gmm_data, preset_specs


def blobs(seed=0, n0=100, n1=20):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(0, 1, (n0, 3)), rng.normal(2.5, 0.7, (n1, 3))])
    return Dataset(x, np.repeat([0, 1], [n0, n1]))


def assert_on_segments(ds, records):
    for r in records:
        a, b = ds.features[r.m_index], ds.features[r.v_index]
        assert ds.labels[r.m_index] == ds.labels[r.v_index] == r.class_id
        assert 0.0 < r.param < 1.0
        assert np.allclose(r.point, a + r.param * (b - a), atol=1e-9)
        # rank test: point - a is parallel to b - a
        m = np.vstack([r.point - a, b - a])
        s = np.linalg.svd(m, compute_uv=False)
        assert s[-1] <= 1e-9 * max(1.0, s[0])


def test_smote_single_neighbour_is_collinear():
    ds = Dataset(np.array([[0.0, 0.0], [2.0, 1.0], [9.0, 9.0]]), np.array([0, 0, 1]))
    res = smote(ds, 0, BaselineConfig(k_neighbors=1, smote_percent=100), seed=0)
    assert len(res.records) == 2
    assert_on_segments(ds, res.records)


def test_smote_300_percent_quadruples():
    ds = blobs()
    res = smote(ds, 1, BaselineConfig(smote_percent=300), seed=1)
    assert list(res.dataset.class_counts()) == [100, 80]
    assert_on_segments(ds, res.records)
    assert np.array_equal(res.dataset.features[:120], ds.features)


def test_smote_fractional_percent():
    ds = blobs()
    res = smote(ds, 1, BaselineConfig(smote_percent=150), seed=1)
    assert len(res.records) == 30
    seeds = [r.m_index for r in res.records]
    assert all(seeds.count(m) in (1, 2) for m in set(seeds))


def test_smote_duplicates_and_small_class(caplog):
    x = np.vstack([np.tile([1.0, 2.0], (4, 1)), [[5.0, 5.0]]])
    ds = Dataset(x, np.array([0, 0, 0, 0, 1]))
    with caplog.at_level(logging.WARNING):
        res = smote(ds, 0, BaselineConfig(k_neighbors=5, smote_percent=200), seed=0)
    assert "reduced" in caplog.text
    assert len(res.records) == 8
    assert all(np.array_equal(r.point, [1.0, 2.0]) for r in res.records)
    with pytest.raises(BaselineError):
        smote(ds, 1, BaselineConfig(), seed=0)


def test_smote_deterministic():
    ds = blobs(3)
    a = smote(ds, 1, BaselineConfig(), seed=7).dataset.features
    b = smote(ds, 1, BaselineConfig(), seed=7).dataset.features
    c = smote(ds, 1, BaselineConfig(), seed=8).dataset.features
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_adasyn_weight_zero_for_interior_points():
    rng = np.random.default_rng(0)
    inner = rng.normal(0, 0.1, (20, 2))
    border = np.array([[3.0, 0.0], [3.1, 0.1]])
    other = np.array([[3.2, 0.0], [3.3, 0.1], [3.25, -0.1], [3.4, 0.0]])
    ds = Dataset(np.vstack([inner, border, other]), np.repeat([0, 1], [22, 4]))
    w = adasyn_weights(ds, 0, 3)
    assert np.all(w[:20] == 0) and np.all(w[20:] > 0)
    assert w.sum() == pytest.approx(1.0)
    res = adasyn(ds, 0, BaselineConfig(k_neighbors=3), seed=0, majority_size=40)
    assert len(res.records) == 18
    assert {r.m_index for r in res.records} <= {20, 21}


def test_adasyn_uniform_fallback(caplog):
    ds = Dataset(np.array([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2], [10.3]]), np.array([0, 0, 0, 1, 1, 1, 1]))
    with caplog.at_level(logging.WARNING):
        w = adasyn_weights(ds, 0, 2)
    assert np.allclose(w, 1 / 3)
    assert "uniform" in caplog.text


def test_adasyn_beta_and_budget():
    ds = blobs(4)
    assert adasyn(ds, 1, BaselineConfig(adasyn_beta=0.0), seed=0).records == []
    res = adasyn(ds, 1, BaselineConfig(), seed=0)
    assert list(res.dataset.class_counts()) == [100, 100]
    assert_on_segments(ds, res.records)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0.05, 1.0), st.integers(1, 8))
def test_adasyn_weights_sum_to_one(seed, beta, k):
    ds = blobs(seed, 60, 12)
    w = adasyn_weights(ds, 1, k)
    assert w.sum() == pytest.approx(1.0) and np.all(w >= 0)
    res = adasyn(ds, 1, BaselineConfig(k_neighbors=k, adasyn_beta=beta), seed=seed)
    assert len(res.records) == round(beta * 48)


def test_ros_and_rus_identity_and_errors():
    ds = blobs()
    assert ros(ds, 1, 20).dataset is ds
    same = rus(ds, 0, 100)
    assert np.array_equal(same.dataset.features, ds.features) and len(same.rejected) == 0
    with pytest.raises(BaselineError):
        ros(ds, 1, 10)
    with pytest.raises(BaselineError):
        rus(ds, 1, 21)


def test_ros_duplicates_real_rows():
    ds = blobs()
    res = ros(ds, 1, 50, seed=2)
    assert list(res.dataset.class_counts()) == [100, 50]
    orig = {tuple(p) for p in ds.features[ds.labels == 1]}
    assert all(tuple(r.point) in orig for r in res.records)


def test_rus_keeps_a_subset():
    ds = blobs()
    res = rus(ds, 0, 30, seed=3)
    assert list(res.dataset.class_counts()) == [30, 20]
    assert len(res.rejected) == 70
    kept = {tuple(p) for p in res.dataset.features}
    assert not kept & {tuple(p) for p in ds.features[res.rejected]}


def test_rus_single_row_is_uniform():
    ds = Dataset(np.arange(10.0)[:, None], np.zeros(10, dtype=int))
    counts = np.zeros(10)
    for s in range(10_000):
        counts[int(rus(ds, 0, 1, seed=s).dataset.features[0, 0])] += 1
    assert np.all(np.abs(counts - 1000) <= 3 * np.sqrt(10_000 * 0.1 * 0.9))
    assert chisquare(counts).pvalue > 1e-3


def test_adasyn_lands_in_majority_territory_on_two_class_data():
    ds = generate_gmm_data(preset_specs("two_class_3d"), 0)
    res = adasyn(ds, 1, BaselineConfig(), seed=0)
    minority = ds.features[ds.labels == 1]
    majority = ds.features[ds.labels == 0]
    pts = np.array([r.point for r in res.records])
    d_maj = np.linalg.norm(pts[:, None] - majority[None], axis=2).min(1)
    d_min = np.linalg.norm(pts[:, None] - minority[None], axis=2).min(1)
    assert np.any(d_maj < d_min)
