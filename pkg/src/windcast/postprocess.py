"""Ensembling, smoothing, drift scaling and clipping of 288-step forecasts.

The fixed order is ``ensemble -> smooth -> alpha -> clip``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

FORECAST_LEN = 288
ALPHA_BRACKET = (0.25, 4.0)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class Forecast:
    turbine_id: int
    origin: int
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("forecast values must be one-dimensional")
        object.__setattr__(self, "values", v)

    def with_values(self, values, **prov) -> "Forecast":
        return replace(self, values=np.asarray(values, dtype=np.float64), provenance={**self.provenance, **prov})


@dataclass(frozen=True)
class AlphaAdjustment:
    alpha: float
    loss: float
    bracket: tuple = ALPHA_BRACKET
    degenerate: bool = False
    iterations: int = 0


def ensemble_mean(forecasts) -> Forecast:
    forecasts = list(forecasts)
    if not forecasts:
        raise ValueError("need at least one forecast")
    first = forecasts[0]
    for f in forecasts[1:]:
        if f.origin != first.origin or f.turbine_id != first.turbine_id:
            raise ValueError("forecasts disagree on turbine or origin")
        if f.values.shape != first.values.shape:
            raise ValueError("forecasts differ in length")
    stacked = np.stack([f.values for f in forecasts])
    models = []
    for f in forecasts:
        models.extend(f.provenance.get("models", []))
    return Forecast(first.turbine_id, first.origin, stacked.mean(axis=0),
                    {"models": models, "ensemble": len(forecasts)})


def clip(f: Forecast, lo: float = 0.0, hi: float = math.inf) -> Forecast:
    if lo > hi:
        raise ValueError(f"clip bounds inverted: {lo} > {hi}")
    return f.with_values(np.clip(f.values, lo, hi), clip=[lo, hi])


def smooth_values(values, w: int) -> np.ndarray:
    """Centered moving average; windows shrink to the available points at the edges."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    if w % 2 == 0 or w < 1:
        raise ValueError(f"smoothing window must be odd and positive, got {w}")
    if w == 1:
        return values.copy()
    half = w // 2
    cs = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(values, axis=-1)], axis=-1)
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    return (cs[..., hi] - cs[..., lo]) / (hi - lo)


def smooth(f: Forecast, w: int = 3) -> Forecast:
    if not 1 <= w <= FORECAST_LEN - 1:
        raise ValueError(f"smoothing window {w} outside 1..{FORECAST_LEN - 1}")
    return f.with_values(smooth_values(f.values, w), smooth_window=w)


def alpha_loss(alpha: float, pred: np.ndarray, truth: np.ndarray) -> float:
    """Sum of squared plus sum of absolute errors of ``alpha * pred``."""
    d = alpha * pred - truth
    return float(np.sum(d * d) + np.sum(np.abs(d)))


def golden_section(fn, a: float, b: float, tol: float):
    """Minimize a unimodal ``fn`` on ``[a, b]`` until the bracket is narrower than ``tol``."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0
    while b - a > tol:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, (a, b), it


def fit_alpha(pred, truth, mask=None, bracket=ALPHA_BRACKET, tol: float = 1e-9) -> AlphaAdjustment:
    """Scale factor minimizing squared + absolute error over unmasked pairs.

    The loss is convex in ``alpha``, so golden-section search on ``bracket``
    converges to the global minimum; ``alpha = 1`` is kept when it is at least
    as good as the search result.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if pred.shape != truth.shape or mask.shape != pred.shape:
        raise ValueError("pred, truth and mask must have equal sizes")
    if not mask.any():
        raise ValueError("no unmasked pairs to fit alpha on")
    p, t = pred[mask], truth[mask]
    if not np.any(p != 0):
        return AlphaAdjustment(1.0, alpha_loss(1.0, p, t), bracket, degenerate=True)
    x, br, it = golden_section(lambda a: alpha_loss(a, p, t), bracket[0], bracket[1], tol)
    lx, l1 = alpha_loss(x, p, t), alpha_loss(1.0, p, t)
    if bracket[0] <= 1.0 <= bracket[1] and l1 <= lx:
        x, lx = 1.0, l1
    return AlphaAdjustment(float(x), lx, br, False, it)


def apply_alpha(f: Forecast, alpha: float, lo: float | None = None, hi: float | None = None) -> Forecast:
    """Multiply by ``alpha``; re-clip when bounds are given."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    out = f.with_values(f.values * alpha, alpha=float(alpha))
    if lo is not None or hi is not None:
        out = clip(out, -math.inf if lo is None else lo, math.inf if hi is None else hi)
    return out


@dataclass(frozen=True)
class PostConfig:
    alpha: float = 1.0
    smooth_window: int = 3
    clip_lo: float = 0.0
    clip_hi: float | None = None


def postprocess_values(values, cfg: PostConfig, clip_hi: float | None = None, alpha: float | None = None):
    """Array form of smooth -> alpha -> clip over the last axis."""
    hi = cfg.clip_hi if cfg.clip_hi is not None else clip_hi
    hi = math.inf if hi is None else hi
    a = cfg.alpha if alpha is None else alpha
    if not a > 0:
        raise ValueError(f"alpha must be positive, got {a}")
    out = smooth_values(values, cfg.smooth_window) * a
    return np.clip(out, cfg.clip_lo, hi)


def postprocess(forecasts, cfg: PostConfig, clip_hi: float | None = None) -> Forecast:
    """Full chain for one turbine/origin: ensemble -> smooth -> alpha -> clip."""
    hi = cfg.clip_hi if cfg.clip_hi is not None else clip_hi
    f = ensemble_mean(forecasts)
    f = smooth(f, cfg.smooth_window)
    f = apply_alpha(f, cfg.alpha)
    f = clip(f, cfg.clip_lo, math.inf if hi is None else hi)
    return f.with_values(f.values, order=["ensemble", "smooth", "alpha", "clip"])


def write_forecasts(forecasts, path, provenance: dict | None = None) -> None:
    """CSV ``(turbine_id, step, value_kw)`` plus a ``<name>.provenance.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for f in forecasts:
        for step, v in enumerate(f.values, start=1):
            rows.append((f.turbine_id, step, v))
    pd.DataFrame(rows, columns=["turbine_id", "step", "value_kw"]).to_csv(path, index=False, float_format="%.6f")
    side = {
        "forecasts": [{"turbine_id": f.turbine_id, "origin": f.origin, **f.provenance} for f in forecasts],
        **(provenance or {}),
    }
    path.with_suffix(".provenance.json").write_text(json.dumps(side, sort_keys=True, indent=1, default=float) + "\n")
