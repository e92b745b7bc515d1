import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gicaps.clustering import Clustering
from gicaps.dataset import Dataset
from gicaps.undersample import (
    ALPHA_FLOOR,
    UndersampleConfig,
    allocate_quotas,
    angular_profile,
    check_walk_invariant,
    gicaps_undersample,
    select_n_target_cv,
)


def rays(direction, scales):
    # angles are taken after the +1 shift, so build multiples in that frame
    d = np.asarray(direction, dtype=float)
    return np.array([s * d for s in scales]) - 1.0


def test_profile_of_scalar_multiples():
    x = rays([1.0, 2.0, 0.5], [1.0, 1.5, 2.0, 3.0])
    clus = Clustering(np.zeros(4, dtype=int), x[:1], np.array([0]), 0.0)
    (p,) = angular_profile(x, clus, UndersampleConfig(2))
    assert np.allclose(p.thetas, 0.0, atol=1e-7)
    assert p.alpha == pytest.approx(ALPHA_FLOOR) or p.sigma * 1.0 < ALPHA_FLOOR
    assert p.alpha >= ALPHA_FLOOR


def test_profile_single_point_cluster():
    x = np.array([[0.2, 0.3], [0.9, 0.1], [0.8, 0.2]])
    clus = Clustering(np.array([0, 1, 1]), x[[0, 1]], np.array([0, 1]), 0.0)
    profiles = angular_profile(x, clus, UndersampleConfig(2))
    assert profiles[0].quota == 1
    assert list(profiles[0].thetas) == [0.0]


def test_quota_allocation_is_proportional_to_spread():
    assert list(allocate_quotas([0.2, 0.4], 30, [100, 100])) == [10, 20]
    # caps and the floor of one per group
    assert list(allocate_quotas([0.0, 1.0, 1.0], 10, [5, 3, 50])) == [1, 3, 6]
    assert allocate_quotas([0.3, 0.3, 0.3], 1000, [4, 5, 6]).sum() == 15
    with pytest.raises(ValueError):
        allocate_quotas([1, 1, 1], 2, [5, 5, 5])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=1, max_size=6), st.integers(6, 200), st.integers(0, 1000))
def test_quota_allocation_sums_exactly(weights, total, seed):
    caps = np.random.default_rng(seed).integers(1, 60, size=len(weights))
    q = allocate_quotas(weights, total, caps)
    assert q.sum() == min(total, caps.sum())
    assert np.all(q >= 1) and np.all(q <= caps)


def test_identical_directions_keep_only_medoid():
    x = rays([1.0, 1.2, 0.7], np.linspace(1.0, 2.0, 12))
    res = gicaps_undersample(x, UndersampleConfig(5, k_clusters=1), seed=0)
    assert len(res.retained) == 1
    assert res.retained[0] == res.clustering.center_indices[0]
    assert sum(r["reason"] == "duplicate" for r in res.audit) == 11


def test_spread_out_points_all_retained():
    x = np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0], [0.9, 0.95], [0.05, 0.1]])
    res = gicaps_undersample(x, UndersampleConfig(5, k_clusters=1), seed=0)
    assert list(res.retained) == [0, 1, 2, 3, 4]


def test_quota_is_met_exactly_and_walk_invariant_holds():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(400, 3))
    res = gicaps_undersample(x, UndersampleConfig(90, k_clusters=4), seed=1)
    assert len(res.retained) == 90
    assert check_walk_invariant(res.audit, x) == []
    for c in range(res.clustering.k):
        assert np.isin(res.clustering.members(c), res.retained).any()


def test_invariant_checker_catches_tampering():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(120, 3))
    res = gicaps_undersample(x, UndersampleConfig(20, k_clusters=2), seed=0)
    bad = [dict(r) for r in res.audit]
    # promote a rejected point: it sits too close to a kept neighbour
    victim = next(r for r in bad if r["reason"] == "rejected" and r["orthant"] == r["ref_orthant"])
    victim["reason"] = "kept"
    assert check_walk_invariant(bad, x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 80), st.integers(1, 40), st.integers(1, 4))
def test_undersample_contract(seed, n, n_target, k):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 3))
    x[rng.integers(n)] = x[0]  # a repeated row
    k = min(k, n_target)
    cfg = UndersampleConfig(n_target, k_clusters=k)
    res = gicaps_undersample(x, cfg, seed=seed)
    distinct = n - sum(r["reason"] == "duplicate" for r in res.audit)
    assert len(res.retained) == min(n_target, distinct)
    assert len(np.unique(res.retained)) == len(res.retained)
    assert set(res.retained) <= set(range(n))
    assert check_walk_invariant(res.audit, x) == []
    for c in range(res.clustering.k):
        assert np.isin(res.clustering.members(c), res.retained).any()
    again = gicaps_undersample(x, cfg, seed=seed)
    assert np.array_equal(res.retained, again.retained)


def test_auto_k_and_empty_class():
    rng = np.random.default_rng(2)
    x = np.vstack([rng.normal(c, 0.02, size=(40, 2)) for c in ([0.1, 0.1], [0.9, 0.1], [0.5, 0.9])])
    res = gicaps_undersample(x, UndersampleConfig(30), seed=0)
    assert res.clustering.k == 3
    assert len(res.retained) == 30
    with pytest.raises(ValueError):
        gicaps_undersample(np.empty((0, 2)), UndersampleConfig(3))


def test_config_validation():
    with pytest.raises(ValueError):
        UndersampleConfig(0)
    with pytest.raises(ValueError):
        UndersampleConfig(3, k_clusters=5)


def _ds():
    counts = [300, 120, 40]
    y = np.repeat(np.arange(3), counts)
    return Dataset(np.random.default_rng(0).normal(size=(len(y), 2)), y)


def test_select_n_target_cv():
    ds = _ds()
    calls = []
    assert select_n_target_cv(ds, 0, [150], lambda n: calls.append(n) or 0.0) == 150
    assert calls == []
    assert select_n_target_cv(ds, 0, [150, 250], lambda n: {150: 0.7, 250: 0.8}[n]) == 250
    assert select_n_target_cv(ds, 0, [250, 150], lambda n: 0.5) == 150
    with pytest.raises(ValueError):
        select_n_target_cv(ds, 0, [100], lambda n: 0.0)
