import itertools
import warnings

import numpy as np
import pytest
from conftest import make_dataset
from hypothesis import given
from hypothesis import strategies as st

from windcast.cluster import (
    CORRELATION_AGGLOMERATIVE, ClusterModel, _average_linkage, cluster_correlation, cluster_spatial,
    correlation_matrix,
)
from windcast.ingest import TurbineLayout

from oracles import average_linkage_oracle


def layout_of(xy, ids=None):
    ids = range(1, len(xy) + 1) if ids is None else ids
    return [TurbineLayout(int(i), float(x), float(y)) for i, (x, y) in zip(ids, xy)]


def test_two_blobs(rng):
    xy = np.vstack([rng.uniform(-0.1, 0.1, (5, 2)), 100 + rng.uniform(-0.1, 0.1, (5, 2))])
    m = cluster_spatial(layout_of(xy), 2, seed=0)
    assert m.partition() == frozenset({frozenset(range(1, 6)), frozenset(range(6, 11))})


def test_k1_and_kn(rng):
    xy = rng.uniform(0, 10, (7, 2))
    assert set(cluster_spatial(layout_of(xy), 1).assignment) == {0}
    m = cluster_spatial(layout_of(xy), 7)
    assert sorted(m.assignment) == list(range(7))
    for t, c in zip(m.turbine_ids, m.assignment):
        np.testing.assert_array_equal(m.centroids[c], xy[t - 1])


def test_k_out_of_range(rng):
    lay = layout_of(rng.uniform(0, 1, (3, 2)))
    for k in (0, 4):
        with pytest.raises(ValueError):
            cluster_spatial(lay, k)


@given(st.integers(0, 2**32 - 1), st.integers(2, 25), st.integers(1, 6))
def test_lloyd_properties(seed, n, k):
    k = min(k, n)
    xy = np.random.default_rng(seed).uniform(0, 1000, (n, 2))
    m = cluster_spatial(layout_of(xy), k, seed=seed % 97)
    assert set(m.assignment.tolist()) == set(range(k))
    hist = np.array(m.inertia_history)
    assert np.all(np.diff(hist) <= 1e-9 * max(1.0, hist.max(initial=1.0)))
    # fixed point: every turbine sits in its nearest centroid
    d2 = ((xy[:, None] - m.centroids[None]) ** 2).sum(axis=2)
    own = d2[np.arange(n), m.assignment]
    assert np.all(own <= d2.min(axis=1) + 1e-9)


@given(st.integers(0, 2**32 - 1), st.permutations(list(range(12))))
def test_input_order_invariant(seed, perm):
    xy = np.random.default_rng(seed).uniform(0, 1000, (12, 2))
    ids = np.arange(101, 113)
    a = cluster_spatial(layout_of(xy, ids), 3, seed=5)
    b = cluster_spatial(layout_of(xy[perm], ids[perm]), 3, seed=5)
    assert a.partition() == b.partition()


def test_serialization_round_trip(rng, tmp_path):
    m = cluster_spatial(layout_of(rng.uniform(0, 10, (6, 2))), 2, seed=3)
    m.save(tmp_path / "c.json")
    back = ClusterModel.load(tmp_path / "c.json")
    assert back.partition() == m.partition() and back.seed == 3 and back.method == m.method
    np.testing.assert_array_equal(back.centroids, m.centroids)


def test_perfect_correlation_merges_first(rng):
    base = rng.normal(size=300)
    other = rng.normal(size=300)
    patv = np.vstack([base, 2 * base, -base + 0.1 * other, other])
    m = cluster_correlation(make_dataset(patv), 3)
    assert m.cluster_of(1) == m.cluster_of(2)
    assert m.method == CORRELATION_AGGLOMERATIVE


def test_correlation_singletons(rng):
    m = cluster_correlation(make_dataset(rng.normal(size=(5, 50))), 5)
    assert sorted(m.assignment) == list(range(5))


def _mean_within(corr, part):
    vals = [corr[i, j] for g in part for i, j in itertools.combinations(sorted(g), 2)]
    return float(np.mean(vals))


def test_two_drivers_match_brute_force():
    r = np.random.default_rng(0)
    t = np.arange(600)
    a, b = np.sin(2 * np.pi * t / 144), np.sin(2 * np.pi * t / 37 + 1.0)
    drivers = [a, b, a, b, a, b]
    patv = np.vstack([d + 0.1 * r.normal(size=t.size) for d in drivers])
    ds = make_dataset(patv)
    m = cluster_correlation(ds, 2)
    corr, _ = correlation_matrix(ds)
    best = max(
        (frozenset({frozenset(c), frozenset(set(range(6)) - set(c))})
         for r_ in range(1, 6) for c in itertools.combinations(range(6), r_)),
        key=lambda p: _mean_within(corr, p),
    )
    expected = frozenset(frozenset(i + 1 for i in g) for g in best)
    assert m.partition() == expected == frozenset({frozenset({1, 3, 5}), frozenset({2, 4, 6})})


def test_correlation_uses_joint_valid_points(rng):
    x = rng.normal(size=200)
    patv = np.vstack([x, 3 * x + 1])
    validity = np.zeros((2, 200))
    validity[1, :50] = 1
    patv[1, :50] = -1e6  # garbage at invalid slots must not matter
    corr, _ = correlation_matrix(make_dataset(patv, validity))
    assert corr[0, 1] == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.integers(1, 4))
def test_average_linkage_matches_oracle(seed, n, k):
    k = min(k, n)
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(axis=2))
    labels = _average_linkage(dist, k)
    got = frozenset(frozenset(np.flatnonzero(labels == c).tolist()) for c in set(labels.tolist()))
    assert got == average_linkage_oracle(dist, k)


def test_zero_variance_fallback(rng):
    patv = rng.normal(size=(4, 100))
    patv[2] = 7.0
    lay = layout_of([(0, 0), (1000, 0), (1001, 0), (0, 1)])
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        m = cluster_correlation(make_dataset(patv), 2, layout=lay)
    assert m.cluster_of(3) == m.cluster_of(2)


def test_correlation_order_invariant(rng):
    patv = rng.normal(size=(6, 80))
    patv[3] = patv[0] + 0.01 * rng.normal(size=80)
    a = cluster_correlation(make_dataset(patv, ids=[1, 2, 3, 4, 5, 6]), 3)
    perm = [5, 3, 1, 0, 2, 4]
    b = cluster_correlation(make_dataset(patv[perm], ids=np.array([1, 2, 3, 4, 5, 6])[perm]), 3)
    assert a.partition() == b.partition()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cluster_correlation(make_dataset(patv), 2)
