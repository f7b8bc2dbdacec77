"""Synthetic wind farm generator for desk-scale runs and tests.

Wind speed at each turbine is a shared diurnal cycle plus per-turbine AR(1)
noise mixed through an exponential kernel on inter-turbine distance, so
neighbours move together more than distant pairs. An optional slow farm-wide
AR(1) term (``farm_sigma``, off by default) adds regime drift. Power follows a
cubic curve between cut-in and rated speed and is flat at capacity above it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import DEFAULT_SCHEMA, FIELDS, STEPS_PER_DAY, format_timestamp

CAPACITY_KW = 1550.0
CUT_IN = 2.5
RATED = 12.0


@dataclass(frozen=True)
class SyntheticFarmSpec:
    n_turbines: int = 10
    n_days: int = 30
    seed: int = 0
    mean_speed: float = 7.0
    diurnal_amplitude: float = 2.0
    farm_sigma: float = 0.0
    farm_phi: float = 0.98  # per-step AR(1) coefficient of the farm-wide component
    turbine_sigma: float = 1.5
    turbine_phi: float = 0.97
    correlation_length: float = 1500.0
    spacing: float = 600.0
    missing_rate: float = 0.0
    abnormal_rate: float = 0.0


@dataclass
class SyntheticFarm:
    data: pd.DataFrame
    layout: pd.DataFrame
    injections: pd.DataFrame
    wspd: np.ndarray  # (n_turbines, n_steps) clean wind speed
    patv: np.ndarray  # (n_turbines, n_steps) clean power

    def write(self, out_dir, prefix: str = "synth") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "data": out / f"{prefix}_data.csv",
            "layout": out / f"{prefix}_layout.csv",
            "injections": out / f"{prefix}_injections.csv",
        }
        self.data.to_csv(paths["data"], index=False, float_format="%.10g")
        self.layout.to_csv(paths["layout"], index=False, float_format="%.10g")
        self.injections.to_csv(paths["injections"], index=False)
        return paths


def power_curve(v):
    v = np.asarray(v, dtype=np.float64)
    frac = np.clip((v - CUT_IN) / (RATED - CUT_IN), 0.0, 1.0)
    return CAPACITY_KW * frac ** 3


def _layout(n: int, spacing: float, rng) -> np.ndarray:
    cols = int(np.ceil(np.sqrt(n)))
    ij = np.array([(k // cols, k % cols) for k in range(n)], dtype=np.float64)
    return ij * spacing + rng.normal(0.0, 0.05 * spacing, size=(n, 2))


def _ar1(rng, shape, phi, sigma, init_std=True):
    """AR(1) along the last axis with stationary std ``sigma``."""
    *lead, s = shape
    innov = rng.normal(0.0, sigma * np.sqrt(1 - phi * phi), size=shape)
    out = np.empty(shape)
    out[..., 0] = rng.normal(0.0, sigma, size=lead) if init_std else 0.0
    for t in range(1, s):
        out[..., t] = phi * out[..., t - 1] + innov[..., t]
    return out


def generate_synthetic(spec: SyntheticFarmSpec) -> SyntheticFarm:
    if spec.n_turbines < 1:
        raise ValueError("n_turbines must be >= 1")
    if spec.n_days < 5:
        raise ValueError("n_days must be >= 5")
    for name in ("missing_rate", "abnormal_rate"):
        r = getattr(spec, name)
        if not 0.0 <= r < 1.0:
            raise ValueError(f"{name} must lie in [0, 1), got {r}")
    for name in ("farm_phi", "turbine_phi"):
        if not 0.0 <= getattr(spec, name) < 1.0:
            raise ValueError(f"{name} must lie in [0, 1)")
    if spec.missing_rate + spec.abnormal_rate >= 1.0:
        raise ValueError("missing_rate + abnormal_rate must stay below 1")

    rng = np.random.default_rng(spec.seed)
    n, s = spec.n_turbines, spec.n_days * STEPS_PER_DAY
    xy = _layout(n, spec.spacing, rng)
    tod = np.arange(s) % STEPS_PER_DAY
    diurnal = spec.diurnal_amplitude * np.sin(2 * np.pi * (tod / STEPS_PER_DAY) - 2.0)
    farm = _ar1(rng, (s,), spec.farm_phi, spec.farm_sigma)

    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    cov = np.exp(-d / spec.correlation_length) + 1e-9 * np.eye(n)
    chol = np.linalg.cholesky(cov)
    local = chol @ _ar1(rng, (n, s), spec.turbine_phi, spec.turbine_sigma)
    wspd = np.clip(spec.mean_speed + diurnal + farm + local + rng.normal(0, 0.3, (n, s)), 0.0, 24.0)

    patv = power_curve(wspd) * np.exp(rng.normal(0.0, 0.03, (n, s)))
    patv = np.minimum(patv, CAPACITY_KW)
    pitch = np.where(wspd > RATED, (wspd - RATED) * 2.0, 0.0)
    etmp = 15.0 + 8.0 * np.sin(2 * np.pi * tod / STEPS_PER_DAY - 2.5) + rng.normal(0, 0.5, (n, s))
    cols = {
        "wspd": wspd,
        "wdir": np.clip(rng.normal(0.0, 15.0, (n, s)), -180, 180),
        "etmp": etmp,
        "itmp": etmp + 10.0 + patv / 200.0 + rng.normal(0, 0.5, (n, s)),
        "ndir": _ar1(rng, (n, s), 0.99, 60.0),
        "pab1": pitch + np.abs(rng.normal(0, 0.05, (n, s))),
        "pab2": pitch + np.abs(rng.normal(0, 0.05, (n, s))),
        "pab3": pitch + np.abs(rng.normal(0, 0.05, (n, s))),
        "prtv": 0.1 * patv * rng.normal(0, 1.0, (n, s)),
        "patv": patv,
    }
    clean_wspd, clean_patv = wspd.copy(), patv.copy()
    values = np.stack([cols[f] for f in FIELDS], axis=2)

    total = n * s
    n_miss = int(round(spec.missing_rate * total))
    n_abn = int(round(spec.abnormal_rate * total))
    picks = rng.choice(total, size=n_miss + n_abn, replace=False)
    miss, abn = picks[:n_miss], picks[n_miss:]
    present = np.ones((n, s), dtype=bool)
    log = []
    i_w, i_p = FIELDS.index("wspd"), FIELDS.index("patv")
    for k, flat in enumerate(miss):
        i, t = divmod(int(flat), s)
        if k % 2 == 0:
            present[i, t] = False
            log.append((i, t, "row_absent"))
        else:
            values[i, t, int(rng.integers(len(FIELDS)))] = np.nan
            log.append((i, t, "field_blank"))
    for k, flat in enumerate(abn):
        i, t = divmod(int(flat), s)
        if k % 2 == 0:
            values[i, t, i_p] = -float(rng.uniform(1.0, 30.0))
            log.append((i, t, "negative_power"))
        else:
            values[i, t, i_p] = 0.0
            values[i, t, i_w] = max(values[i, t, i_w], 3.0 + float(rng.uniform(0.0, 5.0)))
            log.append((i, t, "zero_power_high_wind"))

    ids = np.arange(1, n + 1)
    ti, tt = np.nonzero(present)
    data = pd.DataFrame({
        DEFAULT_SCHEMA["turbine_id"]: ids[ti],
        DEFAULT_SCHEMA["day"]: tt // STEPS_PER_DAY + 1,
        DEFAULT_SCHEMA["timestamp"]: [format_timestamp(k) for k in tt % STEPS_PER_DAY],
    })
    for j, f in enumerate(FIELDS):
        data[DEFAULT_SCHEMA[f]] = values[ti, tt, j]
    layout = pd.DataFrame({"TurbID": ids, "x": xy[:, 0], "y": xy[:, 1]})
    log.sort()
    injections = pd.DataFrame(
        [(int(ids[i]), t // STEPS_PER_DAY + 1, format_timestamp(t % STEPS_PER_DAY), kind) for i, t, kind in log],
        columns=["TurbID", "Day", "Tmstamp", "kind"],
    )
    return SyntheticFarm(data, layout, injections, clean_wspd, clean_patv)
