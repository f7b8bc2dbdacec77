"""Imputation, robust scaling, GBDT feature engineering and GRU windowing."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import _kernels
from .cluster import ClusterModel
from .ingest import FIELDS, STEPS_PER_DAY, DataError, Dataset, Validity


# --------------------------------------------------------------------------
# Imputation


def impute(ds: Dataset, clusters: ClusterModel) -> Dataset:
    """Fill every value of a non-VALID record.

    First with the mean of the same field over VALID cluster peers at the same
    slot, then by per-turbine linear interpolation in time over whatever is
    known after the first pass (constant extension at the series ends). The
    returned dataset keeps the original ``validity`` array as the mask of
    originally-invalid positions.
    """
    values = np.array(ds.values, dtype=np.float64)
    invalid = ds.validity != Validity.VALID
    labels = clusters.assignment_for(ds.turbine_ids)
    known = ~invalid

    for c in np.unique(labels):
        rows = np.nonzero(labels == c)[0]
        ok = ~invalid[rows]
        cnt = ok.sum(axis=0)
        sums = np.where(ok[:, :, None], values[rows], 0.0).sum(axis=0)
        has_peer = cnt > 0
        mean = np.divide(sums, cnt[:, None], out=np.zeros_like(sums), where=has_peer[:, None])
        for r in rows:
            fill = invalid[r] & has_peer
            values[r, fill] = mean[fill]
            known[r, fill] = True

    steps = np.arange(ds.n_steps)
    for r in range(ds.n_turbines):
        gap = ~known[r]
        if not gap.any():
            continue
        if not known[r].any():
            raise DataError(
                f"turbine {int(ds.turbine_ids[r])}: fields {list(FIELDS)} are invalid at every "
                "slot and no cluster peer is ever valid"
            )
        xp = steps[known[r]]
        for f in range(len(FIELDS)):
            values[r, gap, f] = np.interp(steps[gap], xp, values[r, xp, f])
    return ds.with_values(values)


# --------------------------------------------------------------------------
# Robust scaling


@dataclass(frozen=True, eq=False)
class RobustScaler:
    columns: tuple
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    scale: np.ndarray

    def index(self, columns) -> list:
        try:
            return [self.columns.index(c) for c in columns]
        except ValueError as exc:
            raise ValueError(f"column mismatch: scaler has {self.columns}, got {tuple(columns)}") from exc

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "median": self.median.tolist(),
                "q25": self.q25.tolist(), "q75": self.q75.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RobustScaler":
        return cls(tuple(d["columns"]), *(np.array(d[k], dtype=np.float64)
                                          for k in ("median", "q25", "q75", "scale")))


def fit_scaler_values(values: np.ndarray, columns) -> RobustScaler:
    """Fit on a 2-D ``(n, len(columns))`` array; NaN entries are ignored."""
    columns = tuple(columns)
    med, q25, q75 = [], [], []
    for j, name in enumerate(columns):
        col = values[:, j]
        col = col[np.isfinite(col)]
        if col.size == 0:
            raise DataError(f"column {name!r} has no valid values to fit a scaler")
        a, b, c = np.quantile(col, [0.25, 0.5, 0.75], method="linear")
        q25.append(a)
        med.append(b)
        q75.append(c)
    med, q25, q75 = np.array(med), np.array(q25), np.array(q75)
    iqr = q75 - q25
    scale = np.where(iqr > 0, iqr, 1.0)
    return RobustScaler(columns, med, q25, q75, scale)


def fit_scaler(ds: Dataset, columns=FIELDS, turbine_mask=None, step_slice=slice(None)) -> RobustScaler:
    """Fit per-column median/quartiles on VALID records only."""
    cols = [FIELDS.index(c) for c in columns]
    valid = ds.validity == Validity.VALID
    vals = ds.values[:, step_slice][:, :, cols]
    valid = valid[:, step_slice]
    if turbine_mask is not None:
        vals, valid = vals[turbine_mask], valid[turbine_mask]
    return fit_scaler_values(vals[valid], columns)


def apply_scaler(scaler: RobustScaler, values, columns=None) -> np.ndarray:
    """``(x - median) / scale`` over the last axis."""
    idx = scaler.index(columns if columns is not None else scaler.columns)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != len(idx):
        raise ValueError(f"column mismatch: expected {len(idx)} columns, got {values.shape[-1]}")
    return (values - scaler.median[idx]) / scaler.scale[idx]


def invert_scaler(scaler: RobustScaler, values, columns=None) -> np.ndarray:
    idx = scaler.index(columns if columns is not None else scaler.columns)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != len(idx):
        raise ValueError(f"column mismatch: expected {len(idx)} columns, got {values.shape[-1]}")
    return values * scaler.scale[idx] + scaler.median[idx]


# --------------------------------------------------------------------------
# GBDT features

ROLLING_STATS = ("mean", "max", "min", "std")


@dataclass(frozen=True)
class FeatureSpec:
    base_columns: tuple = ("patv", "wspd")
    windows: tuple = (6, 12, 36, 72, 144)
    lags: tuple = (1, 6, 36, 144, 288)
    raw_columns: tuple = FIELDS

    def __post_init__(self):
        for w in self.windows:
            if not 1 <= w <= 144:
                raise ValueError(f"rolling window {w} outside 1..144")
        for lag in self.lags:
            if not 1 <= lag <= 288:
                raise ValueError(f"lag {lag} outside 1..288")

    @property
    def history_needed(self) -> int:
        """Minimum origin index at which every feature is defined."""
        return max([w - 1 for w in self.windows] + list(self.lags) + [0])

    def origin_feature_names(self) -> list:
        names = list(self.raw_columns)
        for c in self.base_columns:
            for w in self.windows:
                names += [f"{c}_{s}_{w}" for s in ROLLING_STATS]
            names += [f"{c}_diff_{lag}" for lag in self.lags]
        return names + ["time_of_day", "turbine_id", "cluster_id"]

    def feature_names(self, with_horizon: bool = True) -> list:
        names = self.origin_feature_names()
        if with_horizon:
            names += ["horizon_offset", "target_time_of_day"]
        return names


def origin_features(ds: Dataset, spec: FeatureSpec, cluster_ids=None) -> np.ndarray:
    """Feature values with every step taken as forecast origin.

    Shape ``(n_turbines, n_steps, len(spec.origin_feature_names()))``. Each
    feature uses data at or before its origin only; entries without enough
    history are NaN.
    """
    n, s = ds.n_turbines, ds.n_steps
    names = spec.origin_feature_names()
    out = np.full((n, s, len(names)), np.nan)
    if cluster_ids is None:
        cluster_ids = np.zeros(n, dtype=np.int64)
    tod = ds.time_of_day().astype(np.float64)
    raw_idx = [FIELDS.index(c) for c in spec.raw_columns]
    for i in range(n):
        cols = [ds.values[i, :, j] for j in raw_idx]
        for c in spec.base_columns:
            x = np.ascontiguousarray(ds.values[i, :, FIELDS.index(c)])
            for w in spec.windows:
                cols.extend(_kernels.rolling_stats(x, w))
            for lag in spec.lags:
                d = np.full(s, np.nan)
                if lag < s:
                    d[lag:] = x[lag:] - x[:-lag]
                cols.append(d)
        cols += [tod, np.full(s, float(ds.turbine_ids[i])), np.full(s, float(cluster_ids[i]))]
        out[i] = np.column_stack(cols)
    need = spec.history_needed
    out[:, :need] = np.nan
    return out


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """Rows of (turbine, origin, horizon) with named feature columns."""

    names: tuple
    X: np.ndarray
    target: np.ndarray
    target_valid: np.ndarray
    turbine_id: np.ndarray
    origin: np.ndarray
    horizon: np.ndarray
    history_ok: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return int(self.X.shape[0])

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def select(self, mask) -> "FeatureFrame":
        return FeatureFrame(self.names, self.X[mask], self.target[mask], self.target_valid[mask],
                            self.turbine_id[mask], self.origin[mask], self.horizon[mask],
                            self.history_ok[mask])

    def training_rows(self) -> "FeatureFrame":
        """Rows with full history and a VALID target."""
        return self.select(self.history_ok & self.target_valid)

    def to_csv(self, path) -> None:
        df = pd.DataFrame(self.X, columns=list(self.names))
        df.insert(0, "origin", self.origin)
        df["target"] = self.target
        df["target_valid"] = self.target_valid
        df.to_csv(Path(path), index=False, float_format="%.17g")

    @staticmethod
    def concat(frames) -> "FeatureFrame":
        frames = list(frames)
        names = frames[0].names
        if any(f.names != names for f in frames):
            raise ValueError("cannot concatenate frames with different columns")
        return FeatureFrame(names, *(np.concatenate([getattr(f, a) for f in frames])
                                     for a in ("X", "target", "target_valid", "turbine_id",
                                               "origin", "horizon", "history_ok")))


def engineer_features(ds: Dataset, spec: FeatureSpec, origins=None, horizons=(1,),
                      cluster_ids=None, base=None, validity=None) -> FeatureFrame:
    """Rows for every turbine x origin x horizon.

    ``origins`` are absolute step indices (default: every step leaving room for
    the largest horizon). ``base`` may carry a precomputed
    :func:`origin_features` array. Target validity comes from ``validity``
    (default ``ds.validity``), so imputed targets never count as truth.
    """
    horizons = np.asarray(horizons, dtype=np.int64)
    if origins is None:
        origins = np.arange(0, ds.n_steps - int(horizons.max()))
    origins = np.asarray(origins, dtype=np.int64)
    if base is None:
        base = origin_features(ds, spec, cluster_ids)
    validity = ds.validity if validity is None else validity
    patv = ds.field("patv")
    n, no, nh = ds.n_turbines, origins.size, horizons.size
    ti = np.repeat(np.arange(n), no * nh)
    oo = np.tile(np.repeat(origins, nh), n)
    hh = np.tile(horizons, n * no)
    feats = base[ti, oo]
    tgt_t = oo + hh
    inside = tgt_t < ds.n_steps
    tgt_t_c = np.minimum(tgt_t, ds.n_steps - 1)
    target = np.where(inside, patv[ti, tgt_t_c], np.nan)
    target_valid = inside & (validity[ti, tgt_t_c] == Validity.VALID)
    target_tod = (ds.step0 + oo + hh) % STEPS_PER_DAY
    X = np.column_stack([feats, hh.astype(np.float64), target_tod.astype(np.float64)])
    history_ok = np.isfinite(feats).all(axis=1)
    return FeatureFrame(tuple(spec.feature_names()), X, target, target_valid,
                        ds.turbine_ids[ti], oo, hh, history_ok)


# --------------------------------------------------------------------------
# GRU windows


@dataclass(frozen=True, eq=False)
class WindowSample:
    input: np.ndarray
    time_of_day: np.ndarray
    turbine_id: int
    target: np.ndarray
    target_mask: np.ndarray
    start: int = 0

    @property
    def origin(self) -> int:
        """Absolute index of the last input step."""
        return self.start + self.input.shape[0] - 1


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Lazily gathered windows over a stack of (already scaled) series.

    ``features`` is ``(n_turbines, n_steps, n_features)``, ``target`` and
    ``mask`` are ``(n_turbines, n_steps)``; ``index`` rows are
    ``(turbine_row, window_start)``.
    """

    features: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    id_index: np.ndarray
    input_len: int
    output_len: int
    index: np.ndarray
    step0: int = 0  # time-of-day slot of column 0

    def __len__(self) -> int:
        return int(self.index.shape[0])

    def gather(self, rows=None):
        """Return ``(inputs, tod, id_idx, target, mask)`` arrays for the chosen windows."""
        idx = self.index if rows is None else self.index[rows]
        tr, st = idx[:, 0], idx[:, 1]
        ti = st[:, None] + np.arange(self.input_len)
        to = st[:, None] + self.input_len + np.arange(self.output_len)
        inputs = self.features[tr[:, None], ti]
        tod = (self.step0 + ti) % STEPS_PER_DAY
        return inputs, tod, self.id_index[tr], self.target[tr[:, None], to], self.mask[tr[:, None], to]


def window_starts(n_steps: int, input_len: int, output_len: int, stride: int = 1,
                  start: int = 0, stop: int | None = None) -> np.ndarray:
    stop = n_steps if stop is None else stop
    last = stop - input_len - output_len
    if last < start:
        return np.zeros(0, dtype=np.int64)
    return np.arange(start, last + 1, stride, dtype=np.int64)


def build_window_set(features, target, mask, id_index, input_len, output_len, stride=1,
                     start=0, stop=None, step0=0) -> WindowSet:
    n, s = target.shape
    st = window_starts(s, input_len, output_len, stride, start, stop)
    index = np.column_stack([np.repeat(np.arange(n), st.size), np.tile(st, n)]).astype(np.int64)
    return WindowSet(features, target, mask, np.asarray(id_index, dtype=np.int64),
                     input_len, output_len, index.reshape(-1, 2), step0)


def windowize(ds: Dataset, input_len: int, output_len: int, stride: int = 1,
              scaler: RobustScaler | None = None, validity=None) -> list:
    """All (input, target) windows of every turbine, in turbine then start order."""
    validity = ds.validity if validity is None else validity
    feats = ds.values if scaler is None else apply_scaler(scaler, ds.values, FIELDS)
    patv = feats[:, :, FIELDS.index("patv")]
    mask = validity == Validity.VALID
    ws = build_window_set(feats, patv, mask, np.arange(ds.n_turbines), input_len, output_len, stride,
                          step0=ds.step0)
    out = []
    for k in range(len(ws)):
        inputs, tod, idx, tgt, msk = ws.gather(np.array([k]))
        out.append(WindowSample(inputs[0], tod[0], int(ds.turbine_ids[idx[0]]), tgt[0], msk[0],
                                int(ws.index[k, 1])))
    return out


__all__ = [
    "FeatureFrame", "FeatureSpec", "RobustScaler", "WindowSample", "WindowSet", "apply_scaler",
    "build_window_set", "engineer_features", "fit_scaler", "fit_scaler_values", "impute",
    "invert_scaler", "origin_features", "window_starts", "windowize",
]
