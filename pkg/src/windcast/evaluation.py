"""Masked forecast metrics, the challenge score and rolling test-window sampling.

Errors are pooled per (window, turbine) over the originally valid target
positions, then RMSE and MAE are averaged uniformly over all (window,
turbine) pairs that have at least one valid target. The score is
``-(RMSE + MAE) / 2``; a smaller magnitude is better.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import SCHEMA_VERSION, write_json

# Inclusive-exclusive step ranges (0-based) of the timescale buckets.
BUCKETS = {"score_6h": (0, 36), "score_day1": (0, 144), "score_day2": (144, 288)}


def challenge_score(rmse: float, mae: float) -> float:
    return -(rmse + mae) / 2.0


@dataclass
class EvalReport:
    rmse: float
    mae: float
    overall_score: float
    score_6h: float
    score_day1: float
    score_day2: float
    n_windows: int
    n_masked_targets: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, rmse: float, mae: float, **kw) -> "EvalReport":
        s = challenge_score(rmse, mae)
        base = dict(score_6h=math.nan, score_day1=math.nan, score_day2=math.nan, n_windows=0, n_masked_targets=0)
        base.update(kw)
        return cls(rmse, mae, s, **base)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (f"score={self.overall_score:.4f} rmse={self.rmse:.4f} mae={self.mae:.4f} "
                f"6h={self.score_6h:.4f} day1={self.score_day1:.4f} day2={self.score_day2:.4f} "
                f"windows={self.n_windows}")


def _pooled(err: np.ndarray, mask: np.ndarray):
    """Per-(window, turbine) RMSE/MAE averaged over pairs with any valid target."""
    cnt = mask.sum(axis=-1)
    keep = cnt > 0
    if not keep.any():
        return math.nan, math.nan, keep
    e = np.where(mask, err, 0.0)
    rmse = np.sqrt((e * e).sum(axis=-1)[keep] / cnt[keep])
    mae = np.abs(e).sum(axis=-1)[keep] / cnt[keep]
    return float(rmse.mean()), float(mae.mean()), keep


def compute_metrics(pred, truth, mask) -> EvalReport:
    """Report for arrays shaped ``(n_windows, n_turbines, n_steps)``.

    ``mask`` is True where the target was an originally VALID observation;
    masked-out truth values never influence the result.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.ndim == 1:
        pred, truth, mask = pred[None, None], truth[None, None], mask[None, None]
    if not (pred.shape == truth.shape == mask.shape):
        raise ValueError("pred, truth and mask shapes differ")
    if not mask.any():
        raise ValueError("no unmasked target positions")
    err = pred - np.where(mask, truth, 0.0)
    rmse, mae, keep = _pooled(err, mask)
    scores = {}
    for name, (a, b) in BUCKETS.items():
        if a >= pred.shape[-1]:
            scores[name] = math.nan
            continue
        r, m, _ = _pooled(err[..., a:b], mask[..., a:b])
        scores[name] = challenge_score(r, m)
    return EvalReport(
        rmse=rmse, mae=mae, overall_score=challenge_score(rmse, mae),
        n_windows=int(keep.any(axis=-1).sum()), n_masked_targets=int((~mask).sum()), **scores,
    )


def step_error_curve(pred, truth, mask) -> pd.DataFrame:
    """Per-step mean absolute and root-mean-square error over all unmasked pairs."""
    pred, truth, mask = (np.asarray(a) for a in (pred, truth, mask))
    e = np.where(mask, pred - np.where(mask, truth, 0.0), 0.0)
    flat_e = e.reshape(-1, e.shape[-1])
    flat_m = mask.reshape(-1, mask.shape[-1]).astype(bool)
    cnt = flat_m.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mae = np.abs(flat_e).sum(axis=0) / cnt
        rmse = np.sqrt((flat_e ** 2).sum(axis=0) / cnt)
    return pd.DataFrame({"step": np.arange(1, e.shape[-1] + 1), "mae": mae, "rmse": rmse, "n": cnt})


@dataclass(frozen=True)
class EvalWindow:
    start: int
    input_len: int
    output_len: int

    @property
    def origin(self) -> int:
        """Index of the last observed step."""
        return self.start + self.input_len - 1

    @property
    def target_slice(self) -> slice:
        return slice(self.start + self.input_len, self.start + self.input_len + self.output_len)

    @property
    def input_slice(self) -> slice:
        return slice(self.start, self.start + self.input_len)


def valid_window_starts(n_steps: int, input_len: int = 288, output_len: int = 288) -> np.ndarray:
    return np.arange(0, max(0, n_steps - input_len - output_len + 1))


def reconstruct_test(n_steps: int, n_windows: int = 30, input_len: int = 288, output_len: int = 288,
                     seed: int = 0, offset: int = 0) -> list:
    """Sample ``n_windows`` distinct window starts uniformly from a held-out span.

    ``n_steps`` is the span length (or a Dataset, whose length is used);
    ``offset`` shifts the returned windows into absolute step indices.
    """
    n_steps = getattr(n_steps, "n_steps", n_steps)
    starts = valid_window_starts(int(n_steps), input_len, output_len)
    if starts.size < n_windows:
        raise ValueError(f"only {starts.size} valid window origins for {n_windows} windows")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(starts, size=n_windows, replace=False))
    return [EvalWindow(int(s) + offset, input_len, output_len) for s in chosen]


def write_report(path, reports: dict, meta: dict | None = None) -> None:
    write_json(path, {"schema_version": SCHEMA_VERSION, **(meta or {}),
                      "reports": {k: v.to_dict() for k, v in reports.items()}})


def write_curve(path, curves: dict) -> None:
    """Plot-ready CSV: one block of rows per model."""
    frames = [c.assign(model=name) for name, c in curves.items()]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames).to_csv(path, index=False, float_format="%.6f")
