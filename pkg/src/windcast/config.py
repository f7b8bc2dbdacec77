"""Pipeline configuration: nested dataclasses loaded from YAML with dotted overrides.

Precedence (lowest to highest): built-in defaults, the YAML file, ``--set
key=value`` overrides given on the command line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

CONFIG_ENV = "WINDCAST_CONFIG"


@dataclass
class PathsConfig:
    data: str = "data/wtbdata.csv"
    layout: str = "data/layout.csv"
    work_dir: str = "work"


@dataclass
class SplitConfig:
    train_days: int = 200
    valid_days: int = 45
    test_days: int = 16


@dataclass
class ClusterConfig:
    method: str = "spatial"  # or "correlation"
    k_gru: int = 24
    k_gbdt: int = 4
    seed: int = 0


@dataclass
class AbnormalConfig:
    negative_power: bool = True
    zero_power_high_wind: bool = True
    wind_speed_threshold: float = 2.5
    pitch_angle: bool = False
    pitch_limit: float = 89.0
    direction_range: bool = False


@dataclass
class PreprocessConfig:
    base_columns: list = field(default_factory=lambda: ["patv", "wspd"])
    windows: list = field(default_factory=lambda: [6, 12, 36, 72, 144])
    lags: list = field(default_factory=lambda: [1, 6, 36, 144, 288])
    abnormal: AbnormalConfig = field(default_factory=AbnormalConfig)


@dataclass
class GbdtConfig:
    buckets: list = field(default_factory=lambda: [1, 3, 9, 18, 36, 72, 288])
    learning_rate: float = 0.05
    max_leaves: int = 63
    min_samples_leaf: int = 20
    bagging_fraction: float = 0.8
    num_boost_round: int = 1000
    early_stopping_rounds: int = 20
    max_bins: int | None = None
    origin_stride: int = 1
    horizons_per_bucket: int | None = None
    seed: int = 0


@dataclass
class GruSection:
    layers: int = 2
    hidden: int = 48
    numeric_dim: int = 42
    time_dim: int = 6
    id_dim: int = 6
    dropout: float = 0.05
    learning_rate: float = 1e-4
    pretrain_input: int = 72
    pretrain_epochs: int = 20
    finetune_input: int = 36
    finetune_epochs: int = 5
    batch_size: int = 256
    clip_norm: float = 5.0
    stride: int = 1
    seed: int = 0
    keep_best_epoch: bool = False


@dataclass
class PostprocessConfig:
    alpha: float = 1.0
    fit_alpha: bool = False
    smooth_window: int = 3
    clip_lo: float = 0.0
    clip_hi: float | None = None


@dataclass
class EvalConfig:
    n_windows: int = 30
    input_len: int = 288
    output_len: int = 288
    seed: int = 0


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    clustering: ClusterConfig = field(default_factory=ClusterConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    gru: GruSection = field(default_factory=GruSection)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    threads: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of every setting that affects artifacts (paths excluded)."""
        d = self.to_dict()
        d.pop("paths")
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def work_dir(self) -> Path:
        return Path(self.paths.work_dir)

    def n_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


def _build(cls, data: dict, where: str = ""):
    if not isinstance(data, dict):
        raise ValueError(f"config section {where or '<root>'} must be a mapping")
    kwargs = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {where + key!r}")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value or {}, f"{where}{key}.")
        elif isinstance(value, dict):
            raise ValueError(f"config key {where + key!r} is a value, not a section")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict | None) -> PipelineConfig:
    return _build(PipelineConfig, data or {})


def _set_dotted(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ValueError(f"cannot set {dotted}: {k} is not a section")
    cur[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ValueError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults <- YAML file (``path`` or ``$WINDCAST_CONFIG``) <- overrides."""
    path = path or os.environ.get(CONFIG_ENV)
    data: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        data = yaml.safe_load(p.read_text()) or {}
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_dotted(data, key, value)
    return from_dict(data)


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
