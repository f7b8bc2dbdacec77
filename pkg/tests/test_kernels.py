import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from windcast import _kernels
from windcast._kernels import available_backends

from oracles import exhaustive_split, naive_rolling

BACKENDS = available_backends()
IDS = [b.BACKEND for b in BACKENDS]


def test_backend_selected():
    assert _kernels.BACKEND in {"cython", "python"}
    assert BACKENDS[0].BACKEND == "python"


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_rolling_matches_naive(k, rng):
    x = rng.normal(size=300)
    for w in (1, 2, 6, 37, 144):
        mean, mx, mn, sd = k.rolling_stats(x, w)
        ref = naive_rolling(x, w)
        np.testing.assert_array_equal(mean, ref["mean"])
        np.testing.assert_array_equal(mx, ref["max"])
        np.testing.assert_array_equal(mn, ref["min"])
        np.testing.assert_array_equal(sd, ref["std"])


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_rolling_short_series_all_nan(k):
    out = k.rolling_stats(np.arange(3.0), 5)
    assert all(np.isnan(a).all() for a in out)


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_best_split_matches_exhaustive(k, rng):
    for _ in range(20):
        n = int(rng.integers(2, 40))
        X = np.round(rng.normal(size=(n, 3)), 1)
        y = rng.normal(size=n)
        sidx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
        for min_leaf in (1, 3):
            f, thr, gain, n_left = k.best_split(X, y, sidx, min_leaf)
            ref = exhaustive_split(X, y, list(range(n)), min_leaf)
            if ref is None or ref[2] <= 0:
                assert f == -1 or gain < 1e-9
                continue
            assert (f, thr) == (ref[0], ref[1])
            assert gain == pytest.approx(ref[2], rel=1e-9, abs=1e-12)
            assert n_left == int((X[:, f] <= thr).sum())


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_partition_keeps_order(k, rng):
    X = rng.normal(size=(30, 2))
    sidx = np.ascontiguousarray(np.argsort(X, axis=0).T.astype(np.int64))
    go = (rng.random(30) < 0.4).astype(np.uint8)
    left, right = k.partition_sorted(sidx, go)
    for f in range(2):
        assert np.all(np.diff(X[left[f], f]) >= 0)
        assert np.all(np.diff(X[right[f], f]) >= 0)
        assert set(left[f]) == set(np.flatnonzero(go))
        assert set(right[f]) == set(np.flatnonzero(go == 0))


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@given(st.integers(0, 2**31), st.integers(1, 30))
def test_backends_bit_identical(seed, w):
    py, cy = BACKENDS[0], BACKENDS[1]
    r = np.random.default_rng(seed)
    x = r.normal(size=120) * 100
    for a, b in zip(py.rolling_stats(x, w), cy.rolling_stats(x, w)):
        np.testing.assert_array_equal(a, b)
    X = np.round(r.normal(size=(50, 3)), 2)
    y = r.normal(size=50)
    sidx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    assert py.best_split(X, y, sidx, 2) == cy.best_split(X, y, sidx, 2)
    go = (r.random(50) < 0.5).astype(np.uint8)
    for a, b in zip(py.partition_sorted(sidx, go), cy.partition_sorted(sidx, go)):
        np.testing.assert_array_equal(a, b)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_predict_forest_identical(rng):
    from windcast.gbdt import GbdtParams, fit_boosting

    X = rng.normal(size=(200, 4))
    y = X[:, 0] * 2 + np.sin(X[:, 1]) + rng.normal(scale=0.1, size=200)
    m = fit_boosting(X, y, GbdtParams(num_boost_round=20, early_stopping_rounds=None, min_samples_leaf=5,
                                      max_leaves=8, bagging_fraction=1.0))
    forest = m._forest()
    Xq = np.ascontiguousarray(rng.normal(size=(64, 4)))
    np.testing.assert_array_equal(BACKENDS[0].predict_forest(Xq, *forest), BACKENDS[1].predict_forest(Xq, *forest))
