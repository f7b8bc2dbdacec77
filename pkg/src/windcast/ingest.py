"""Parsing of turbine SCADA tables and layout files, plus validity flagging.

A :class:`Dataset` holds every turbine on a gap-free (day, slot) grid with
144 ten-minute slots per day. Source rows that are absent, or have an empty
numeric cell, are materialized as ``MISSING``; :func:`flag_abnormal` marks
physically implausible records as ``ABNORMAL``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import load_arrays, save_arrays

STEPS_PER_DAY = 144

FIELDS = ("wspd", "wdir", "etmp", "itmp", "ndir", "pab1", "pab2", "pab3", "prtv", "patv")

DEFAULT_SCHEMA = {
    "turbine_id": "TurbID",
    "day": "Day",
    "timestamp": "Tmstamp",
    "wspd": "Wspd",
    "wdir": "Wdir",
    "etmp": "Etmp",
    "itmp": "Itmp",
    "ndir": "Ndir",
    "pab1": "Pab1",
    "pab2": "Pab2",
    "pab3": "Pab3",
    "prtv": "Prtv",
    "patv": "Patv",
}


class DataError(ValueError):
    """Input data violates a format or content rule."""


class Validity(enum.IntEnum):
    VALID = 0
    ABNORMAL = 1
    MISSING = 2


@dataclass(frozen=True)
class TurbineRecord:
    turbine_id: int
    day: int
    time_of_day: int
    wspd: float
    wdir: float
    etmp: float
    itmp: float
    ndir: float
    pab1: float
    pab2: float
    pab3: float
    prtv: float
    patv: float
    validity: Validity
    rule: str | None = None


@dataclass(frozen=True)
class TurbineLayout:
    turbine_id: int
    x: float
    y: float


@dataclass(frozen=True)
class AbnormalRuleSet:
    """Configurable abnormality rules; only the power rules are on by default."""

    negative_power: bool = True
    zero_power_high_wind: bool = True
    wind_speed_threshold: float = 2.5
    pitch_angle: bool = False
    pitch_limit: float = 89.0
    direction_range: bool = False
    wdir_range: tuple = (-180.0, 180.0)
    ndir_range: tuple = (-720.0, 720.0)

    RULE_NAMES = ("negative_power", "zero_power_high_wind", "pitch_angle", "direction_range")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Gap-free per-turbine series.

    ``values`` has shape ``(n_turbines, n_steps, len(FIELDS))`` with NaN for
    absent cells; ``validity`` and ``rule`` have shape ``(n_turbines, n_steps)``.
    ``rule`` holds the index into ``AbnormalRuleSet.RULE_NAMES`` of the rule
    that flagged a record, or -1.
    """

    turbine_ids: np.ndarray
    first_day: int
    values: np.ndarray
    validity: np.ndarray
    rule: np.ndarray
    flag_counts: dict = field(default_factory=dict)
    step0: int = 0  # slot of the first step within ``first_day``

    def __post_init__(self):
        for arr in (self.turbine_ids, self.values, self.validity, self.rule):
            arr.setflags(write=False)

    @property
    def n_turbines(self) -> int:
        return int(self.turbine_ids.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_days(self) -> int:
        return self.n_steps // STEPS_PER_DAY

    steps_per_day = STEPS_PER_DAY

    def field(self, name: str) -> np.ndarray:
        return self.values[:, :, FIELDS.index(name)]

    def turbine_index(self, turbine_id: int) -> int:
        hits = np.nonzero(self.turbine_ids == turbine_id)[0]
        if hits.size == 0:
            raise KeyError(f"unknown turbine id {turbine_id}")
        return int(hits[0])

    def time_of_day(self) -> np.ndarray:
        return (self.step0 + np.arange(self.n_steps)) % STEPS_PER_DAY

    def counts(self) -> dict:
        return {v.name: int(np.count_nonzero(self.validity == v)) for v in Validity}

    def record(self, turbine_id: int, day: int, slot: int) -> TurbineRecord:
        i = self.turbine_index(turbine_id)
        t = (day - self.first_day) * STEPS_PER_DAY + slot - self.step0
        vals = dict(zip(FIELDS, (float(v) for v in self.values[i, t])))
        r = int(self.rule[i, t])
        return TurbineRecord(
            turbine_id=int(turbine_id),
            day=day,
            time_of_day=slot,
            validity=Validity(int(self.validity[i, t])),
            rule=AbnormalRuleSet.RULE_NAMES[r] if r >= 0 else None,
            **vals,
        )

    def slice_steps(self, a: int, b: int) -> "Dataset":
        """Sub-dataset of steps ``a`` (inclusive) to ``b`` (exclusive), time-of-day preserved."""
        if not 0 <= a < b <= self.n_steps:
            raise DataError(f"step range {a}..{b} outside dataset of {self.n_steps} steps")
        absolute = self.step0 + a
        return Dataset(
            self.turbine_ids.copy(), self.first_day + absolute // STEPS_PER_DAY,
            self.values[:, a:b].copy(), self.validity[:, a:b].copy(), self.rule[:, a:b].copy(),
            {}, absolute % STEPS_PER_DAY,
        )

    def slice_days(self, start_day: int, n_days: int) -> "Dataset":
        """Sub-dataset covering ``n_days`` days from absolute day ``start_day``."""
        a = (start_day - self.first_day) * STEPS_PER_DAY - self.step0
        return self.slice_steps(a, a + n_days * STEPS_PER_DAY)

    def subset(self, rows) -> "Dataset":
        """Dataset restricted to the given turbine rows."""
        rows = np.asarray(rows)
        return Dataset(self.turbine_ids[rows].copy(), self.first_day, self.values[rows].copy(),
                       self.validity[rows].copy(), self.rule[rows].copy(), {}, self.step0)

    def with_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(self.turbine_ids.copy(), self.first_day, values,
                       self.validity.copy(), self.rule.copy(), dict(self.flag_counts), self.step0)


def parse_timestamp(text: str) -> int:
    """``"HH:MM"`` to a 10-minute slot index."""
    try:
        hh, mm = str(text).strip().split(":")[:2]
        hour, minute = int(hh), int(mm)
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}") from exc
    if not (0 <= hour < 24 and 0 <= minute < 60) or minute % 10:
        raise DataError(f"bad timestamp {text!r}")
    return hour * 6 + minute // 10


def format_timestamp(slot: int) -> str:
    return f"{slot // 6:02d}:{(slot % 6) * 10:02d}"


def parse_turbine_csv(path, schema: dict | None = None, turbine_ids=None) -> Dataset:
    """Read a SCADA CSV into a gap-free :class:`Dataset` (validity VALID/MISSING).

    ``turbine_ids`` (e.g. from the layout file) restricts the accepted ids;
    unknown ids are rejected.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={schema["timestamp"]: str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing_cols = [c for c in schema.values() if c not in df.columns]
    if missing_cols:
        raise DataError(f"{path}: header lacks columns {missing_cols}")
    if df.empty:
        raise DataError(f"{path}: no data rows")

    tid = df[schema["turbine_id"]].to_numpy()
    day = df[schema["day"]].to_numpy()
    if pd.isna(tid).any() or pd.isna(day).any():
        raise DataError(f"{path}: empty turbine id or day cell")
    tid = tid.astype(np.int64)
    day = day.astype(np.int64)
    stamps, inverse = np.unique(df[schema["timestamp"]].astype(str).to_numpy(), return_inverse=True)
    slot = np.array([parse_timestamp(s) for s in stamps], dtype=np.int64)[inverse.reshape(-1)]
    if (day < 1).any():
        raise DataError(f"{path}: day must be >= 1")

    ids = np.unique(tid)
    if turbine_ids is not None:
        allowed = set(int(t) for t in turbine_ids)
        unknown = sorted(set(ids.tolist()) - allowed)
        if unknown:
            raise DataError(f"{path}: unknown turbine id {unknown[0]}")
        ids = np.array(sorted(allowed), dtype=np.int64)

    first_day = int(day.min())
    n_days = int(day.max()) - first_day + 1
    n_steps = n_days * STEPS_PER_DAY
    ti = np.searchsorted(ids, tid)
    t = (day - first_day) * STEPS_PER_DAY + slot
    key = ti * n_steps + t
    uniq, first_pos, counts = np.unique(key, return_index=True, return_counts=True)
    if (counts > 1).any():
        pos = first_pos[np.argmax(counts > 1)]
        raise DataError(
            f"{path}: duplicate record (turbine={tid[pos]}, day={day[pos]}, "
            f"slot={format_timestamp(slot[pos])})"
        )

    numeric = df[[schema[f] for f in FIELDS]].apply(pd.to_numeric, errors="coerce").to_numpy(np.float64)
    values = np.full((len(ids), n_steps, len(FIELDS)), np.nan)
    values[ti, t] = numeric
    validity = np.full((len(ids), n_steps), Validity.MISSING, dtype=np.int8)
    present = np.isfinite(numeric).all(axis=1)
    validity[ti[present], t[present]] = Validity.VALID
    rule = np.full((len(ids), n_steps), -1, dtype=np.int8)
    return Dataset(ids, first_day, values, validity, rule, {})


def _rule_masks(values: np.ndarray, rules: AbnormalRuleSet) -> list:
    v = {name: values[..., i] for i, name in enumerate(FIELDS)}
    with np.errstate(invalid="ignore"):
        masks = [
            (v["patv"] < 0) if rules.negative_power else None,
            ((v["patv"] == 0) & (v["wspd"] > rules.wind_speed_threshold))
            if rules.zero_power_high_wind else None,
            ((v["pab1"] > rules.pitch_limit) | (v["pab2"] > rules.pitch_limit)
             | (v["pab3"] > rules.pitch_limit)) if rules.pitch_angle else None,
            ((v["wdir"] < rules.wdir_range[0]) | (v["wdir"] > rules.wdir_range[1])
             | (v["ndir"] < rules.ndir_range[0]) | (v["ndir"] > rules.ndir_range[1]))
            if rules.direction_range else None,
        ]
    return masks


def flag_abnormal(ds: Dataset, rules: AbnormalRuleSet | None = None) -> Dataset:
    """Mark non-missing records as ABNORMAL where a rule fires (first rule wins).

    Flags are recomputed from scratch, so the operation is idempotent.
    Per-rule counts land in ``flag_counts``.
    """
    rules = rules or AbnormalRuleSet()
    missing = ds.validity == Validity.MISSING
    validity = np.where(missing, Validity.MISSING, Validity.VALID).astype(np.int8)
    rule = np.full(validity.shape, -1, dtype=np.int8)
    counts = {}
    for k, (name, mask) in enumerate(zip(AbnormalRuleSet.RULE_NAMES, _rule_masks(ds.values, rules))):
        if mask is None:
            continue
        fire = mask & ~missing & (rule < 0)
        rule[fire] = k
        validity[fire] = Validity.ABNORMAL
        counts[name] = int(np.count_nonzero(fire))
    return Dataset(ds.turbine_ids.copy(), ds.first_day, ds.values.copy(), validity, rule, counts, ds.step0)


def parse_layout_csv(path) -> list[TurbineLayout]:
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    id_col = next((c for c in ("TurbID", "id", "turbine_id") if c in df.columns), None)
    if id_col is None or "x" not in df.columns or "y" not in df.columns:
        raise DataError(f"{path}: layout needs columns (id, x, y)")
    out, seen = [], set()
    for row in df[[id_col, "x", "y"]].itertuples(index=False):
        tid, x, y = row
        if pd.isna(tid):
            raise DataError(f"{path}: empty turbine id")
        tid = int(tid)
        if tid in seen:
            raise DataError(f"{path}: duplicate turbine id {tid}")
        if pd.isna(x) or pd.isna(y) or not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{path}: missing coordinate for turbine {tid}")
        seen.add(tid)
        out.append(TurbineLayout(tid, float(x), float(y)))
    return out


def layout_arrays(layout) -> tuple[np.ndarray, np.ndarray]:
    """(ids, xy) arrays from a layout list."""
    ids = np.array([t.turbine_id for t in layout], dtype=np.int64)
    xy = np.array([[t.x, t.y] for t in layout], dtype=np.float64).reshape(-1, 2)
    return ids, xy


def save_dataset(ds: Dataset, path, layout=None) -> None:
    arrays = {
        "turbine_ids": ds.turbine_ids,
        "values": ds.values,
        "validity": ds.validity,
        "rule": ds.rule,
    }
    if layout is not None:
        ids, xy = layout_arrays(layout)
        arrays["layout_ids"] = ids
        arrays["layout_xy"] = xy
    meta = {"kind": "dataset", "first_day": ds.first_day, "step0": ds.step0, "fields": list(FIELDS),
            "flag_counts": ds.flag_counts}
    save_arrays(path, arrays, meta)


def load_dataset(path) -> tuple[Dataset, list | None]:
    arrays, meta = load_arrays(path)
    ds = Dataset(arrays["turbine_ids"], int(meta["first_day"]), arrays["values"],
                 arrays["validity"], arrays["rule"], dict(meta.get("flag_counts", {})),
                 int(meta.get("step0", 0)))
    layout = None
    if "layout_ids" in arrays:
        layout = [TurbineLayout(int(i), float(x), float(y))
                  for i, (x, y) in zip(arrays["layout_ids"], arrays["layout_xy"])]
    return ds, layout


def write_dataset_csv(ds: Dataset, path, schema: dict | None = None) -> None:
    """Write the canonical CSV schema plus a ``validity`` column (absent rows included)."""
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    n, s = ds.n_turbines, ds.n_steps
    steps = ds.step0 + np.arange(s)
    stamps = np.array([format_timestamp(k) for k in range(STEPS_PER_DAY)])
    cols = {
        schema["turbine_id"]: np.repeat(ds.turbine_ids, s),
        schema["day"]: np.tile(ds.first_day + steps // STEPS_PER_DAY, n),
        schema["timestamp"]: np.tile(stamps[steps % STEPS_PER_DAY], n),
    }
    for i, name in enumerate(FIELDS):
        cols[schema[name]] = ds.values[:, :, i].reshape(-1)
    cols["validity"] = [Validity(v).name for v in ds.validity.reshape(-1)]
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")


__all__ = [
    "AbnormalRuleSet", "DataError", "Dataset", "FIELDS", "STEPS_PER_DAY", "TurbineLayout",
    "TurbineRecord", "Validity", "flag_abnormal", "load_dataset", "parse_layout_csv",
    "parse_timestamp", "parse_turbine_csv", "save_dataset", "write_dataset_csv",
]
