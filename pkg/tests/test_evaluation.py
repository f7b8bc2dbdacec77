import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from windcast.evaluation import (
    EvalReport, challenge_score, compute_metrics, reconstruct_test, step_error_curve,
    valid_window_starts, write_curve, write_report,
)

from oracles import pooled_metrics


def test_score_examples():
    assert EvalReport.from_errors(53.977, 45.600).overall_score == pytest.approx(-49.7885, abs=1e-12)
    assert round(challenge_score(53.924, 45.670), 3) == -49.797


def test_perfect_prediction():
    y = np.random.default_rng(0).uniform(0, 1000, (2, 3, 288))
    r = compute_metrics(y, y, np.ones_like(y, bool))
    assert (r.rmse, r.mae, r.overall_score) == (0.0, 0.0, 0.0)


def random_case(seed, W=3, N=4, S=288):
    r = np.random.default_rng(seed)
    pred = r.uniform(0, 1500, (W, N, S))
    truth = r.uniform(0, 1500, (W, N, S))
    mask = r.random((W, N, S)) < 0.85
    return pred, truth, mask


@given(st.integers(0, 2**32 - 1))
def test_matches_pooled_oracle_and_identity(seed):
    pred, truth, mask = random_case(seed, S=40)
    r = compute_metrics(pred, truth, mask)
    rm, ma = pooled_metrics(pred, truth, mask)
    assert r.rmse == pytest.approx(rm, rel=1e-12)
    assert r.mae == pytest.approx(ma, rel=1e-12)
    assert abs(r.overall_score + (r.rmse + r.mae) / 2) <= 1e-9


@given(st.integers(0, 2**32 - 1), st.one_of(st.floats(-1e9, 1e9), st.just(float("nan")), st.just(float("inf"))))
def test_masked_truth_irrelevant(seed, junk):
    pred, truth, mask = random_case(seed)
    a = compute_metrics(pred, truth, mask)
    t2 = np.where(mask, truth, junk)
    assert compute_metrics(pred, t2, mask) == a


def test_bucket_scores():
    pred, truth, mask = random_case(1)
    r = compute_metrics(pred, truth, mask)
    for name, sl in (("score_6h", slice(0, 36)), ("score_day1", slice(0, 144)), ("score_day2", slice(144, 288))):
        rm, ma = pooled_metrics(pred[..., sl], truth[..., sl], mask[..., sl])
        assert getattr(r, name) == pytest.approx(-(rm + ma) / 2, rel=1e-12)


def test_fully_masked_window_dropped():
    pred, truth, mask = random_case(2)
    assert compute_metrics(pred, truth, mask).n_windows == 3
    mask[1] = False
    r = compute_metrics(pred, truth, mask)
    assert r.n_windows == 2
    kept = compute_metrics(pred[[0, 2]], truth[[0, 2]], mask[[0, 2]])
    assert (r.rmse, r.mae, r.overall_score) == (kept.rmse, kept.mae, kept.overall_score)


def test_no_targets_error():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((1, 1, 5)), np.zeros((1, 1, 5)), np.zeros((1, 1, 5), bool))
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((1, 1, 5)), np.zeros((1, 1, 4)), np.ones((1, 1, 5), bool))


def test_reconstruct_16_days():
    assert valid_window_starts(16 * 144).size == 1729
    a = reconstruct_test(2304, 30, seed=7)
    b = reconstruct_test(2304, 30, seed=7)
    assert [w.start for w in a] == [w.start for w in b]
    assert len({w.start for w in a}) == 30
    assert all(0 <= w.start <= 2304 - 576 for w in a)
    assert a[0].target_slice == slice(a[0].start + 288, a[0].start + 576)
    assert a[0].origin == a[0].start + 287


def test_reconstruct_degenerate():
    assert [w.start for w in reconstruct_test(576, 1)] == [0]
    with pytest.raises(ValueError, match="only 1"):
        reconstruct_test(576, 2)


def test_reconstruct_offset():
    a = reconstruct_test(2304, 5, seed=1)
    b = reconstruct_test(2304, 5, seed=1, offset=1000)
    assert [w.start + 1000 for w in a] == [w.start for w in b]


def test_outputs(tmp_path):
    pred, truth, mask = random_case(3)
    rep = compute_metrics(pred, truth, mask)
    write_report(tmp_path / "r.json", {"m": rep}, {"seed": 1})
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["reports"]["m"]["overall_score"] == rep.overall_score and d["schema_version"] == 1
    curve = step_error_curve(pred, truth, mask)
    assert len(curve) == 288 and list(curve.columns) == ["step", "mae", "rmse", "n"]
    write_curve(tmp_path / "c.csv", {"a": curve, "b": curve})
    assert len(pd.read_csv(tmp_path / "c.csv")) == 576
