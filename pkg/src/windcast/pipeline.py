"""Stage orchestration: splits, model training, forecasting at an origin and evaluation.

Every stage is a plain function over in-memory objects so the CLI, the tests
and the benchmark share one code path. Training imputes the whole series at
once; forecasting imputes only the observed prefix up to the origin, so no
value after the origin can leak into a forecast.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import ArtifactError, load_arrays, save_arrays
from .cluster import ClusterModel, cluster_correlation, cluster_spatial
from .config import PipelineConfig
from .evaluation import EvalReport, compute_metrics, reconstruct_test, step_error_curve
from .gbdt import (GbdtEnsemble, GbdtParams, bucket_ranges, sample_horizons, train_ensemble,
                   validate_buckets)
from .gru import (LONG_HEAD, SHORT_HEAD, GruConfig, GruNetwork, GruTrainConfig, stitch,
                  train_continual)
from .ingest import (FIELDS, STEPS_PER_DAY, AbnormalRuleSet, DataError, Dataset, Validity,
                     flag_abnormal)
from .postprocess import FORECAST_LEN, PostConfig, fit_alpha, postprocess_values
from .preprocess import (FeatureFrame, FeatureSpec, RobustScaler, apply_scaler, build_window_set,
                         engineer_features, fit_scaler, impute, invert_scaler, origin_features)

log = logging.getLogger(__name__)

MODEL_NAMES = ("gbdt", "gru", "ensemble", "persistence")


# --------------------------------------------------------------------------
# Config adapters


def rule_set(cfg: PipelineConfig) -> AbnormalRuleSet:
    a = cfg.preprocess.abnormal
    return AbnormalRuleSet(
        negative_power=a.negative_power, zero_power_high_wind=a.zero_power_high_wind,
        wind_speed_threshold=a.wind_speed_threshold, pitch_angle=a.pitch_angle,
        pitch_limit=a.pitch_limit, direction_range=a.direction_range,
    )


def feature_spec(cfg: PipelineConfig) -> FeatureSpec:
    p = cfg.preprocess
    return FeatureSpec(tuple(p.base_columns), tuple(int(w) for w in p.windows), tuple(int(x) for x in p.lags))


def gbdt_params(cfg: PipelineConfig) -> GbdtParams:
    g = cfg.gbdt
    return GbdtParams(
        learning_rate=g.learning_rate, max_leaves=g.max_leaves, min_samples_leaf=g.min_samples_leaf,
        bagging_fraction=g.bagging_fraction, num_boost_round=g.num_boost_round,
        early_stopping_rounds=g.early_stopping_rounds, seed=g.seed, max_bins=g.max_bins,
    )


def gru_configs(cfg: PipelineConfig, n_ids: int, seed_offset: int = 0) -> tuple:
    g = cfg.gru
    net = GruConfig(n_features=len(FIELDS), n_ids=n_ids, numeric_dim=g.numeric_dim, time_dim=g.time_dim,
                    id_dim=g.id_dim, hidden=g.hidden, layers=g.layers, dropout=g.dropout)
    train = GruTrainConfig(
        pretrain_input=g.pretrain_input, pretrain_epochs=g.pretrain_epochs, finetune_input=g.finetune_input,
        finetune_epochs=g.finetune_epochs, learning_rate=g.learning_rate, batch_size=g.batch_size,
        clip_norm=g.clip_norm, stride=g.stride, seed=g.seed + seed_offset, keep_best_epoch=g.keep_best_epoch,
    )
    return net, train


def post_config(cfg: PipelineConfig, alpha: float | None = None) -> PostConfig:
    p = cfg.postprocess
    return PostConfig(alpha=p.alpha if alpha is None else alpha, smooth_window=p.smooth_window,
                      clip_lo=p.clip_lo, clip_hi=p.clip_hi)


# --------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class Split:
    """Step boundaries: train ``[0, train_end)``, valid ``[train_end, valid_end)``,
    test ``[test_start, n_steps)``."""

    train_end: int
    valid_end: int
    test_start: int
    n_steps: int


def split_bounds(n_steps: int, cfg: PipelineConfig) -> Split:
    s = cfg.split
    train_end = s.train_days * STEPS_PER_DAY
    test_start = n_steps - s.test_days * STEPS_PER_DAY
    valid_end = min(train_end + s.valid_days * STEPS_PER_DAY, test_start)
    if s.train_days < 1 or s.test_days < 1 or s.valid_days < 0:
        raise ValueError("split sizes must be positive (valid_days may be 0)")
    if test_start < train_end:
        raise DataError(f"{n_steps // STEPS_PER_DAY} days cannot hold {s.train_days} train days "
                        f"and {s.test_days} disjoint test days")
    return Split(train_end, valid_end, test_start, n_steps)


# --------------------------------------------------------------------------
# Clustering and imputation


def fit_clusters(ds: Dataset, layout, cfg: PipelineConfig) -> tuple:
    """``(gru_clusters, gbdt_clusters)`` with the configured method."""
    c = cfg.clustering
    out = []
    for k in (c.k_gru, c.k_gbdt):
        k = min(k, ds.n_turbines)
        if c.method == "spatial":
            if layout is None:
                raise DataError("spatial clustering needs a layout file")
            out.append(cluster_spatial(layout, k, seed=c.seed))
        elif c.method == "correlation":
            out.append(cluster_correlation(ds, k, layout=layout))
        else:
            raise ValueError(f"unknown clustering method {c.method!r}")
    return tuple(out)


def prepare(ds: Dataset, cfg: PipelineConfig) -> Dataset:
    """Flag abnormal records with the configured rules."""
    return flag_abnormal(ds, rule_set(cfg))


def training_clip_hi(raw: Dataset, split: Split) -> float:
    patv = raw.field("patv")[:, :split.train_end]
    ok = raw.validity[:, :split.train_end] == Validity.VALID
    return float(patv[ok].max()) if ok.any() else math.inf


# --------------------------------------------------------------------------
# GBDT


def _cluster_rows(ds: Dataset, clusters: ClusterModel) -> dict:
    cids = clusters.assignment_for(ds.turbine_ids)
    return {int(c): np.flatnonzero(cids == c) for c in np.unique(cids)}


def build_gbdt_frames(imputed: Dataset, raw: Dataset, clusters: ClusterModel, cfg: PipelineConfig,
                      split: Split) -> dict:
    """``{(cluster, bucket): (train_frame, valid_frame_or_None)}`` with targets kept inside each period."""
    spec = feature_spec(cfg)
    ranges = bucket_ranges(cfg.gbdt.buckets)
    need, stride = spec.history_needed, max(1, cfg.gbdt.origin_stride)
    cids_all = clusters.assignment_for(imputed.turbine_ids)
    frames = {}
    for c, rows in _cluster_rows(imputed, clusters).items():
        sub = imputed.subset(rows)
        validity = raw.validity[rows]
        base = origin_features(sub, spec, cids_all[rows])
        for b, (lo, hi) in enumerate(ranges):
            hz = sample_horizons(lo, hi, cfg.gbdt.horizons_per_bucket)
            parts = []
            for a, z in ((need, split.train_end), (max(need, split.train_end), split.valid_end)):
                origins = np.arange(a, max(a, z - lo), stride)
                if origins.size == 0:
                    parts.append(None)
                    continue
                fr = engineer_features(sub, spec, origins, hz, cids_all[rows], base, validity)
                fr = fr.select(fr.origin + fr.horizon < z)
                parts.append(fr if len(fr.training_rows()) else None)
            if parts[0] is None:
                raise DataError(f"no training rows for gbdt cluster {c} bucket {b}; enlarge train_days")
            frames[(c, b)] = (parts[0], parts[1])
    return frames


def train_gbdt_stage(imputed: Dataset, raw: Dataset, clusters: ClusterModel, cfg: PipelineConfig,
                     threads: int = 1) -> GbdtEnsemble:
    split = split_bounds(raw.n_steps, cfg)
    frames = build_gbdt_frames(imputed, raw, clusters, cfg, split)
    ens = train_ensemble(frames, validate_buckets(cfg.gbdt.buckets), gbdt_params(cfg), threads)
    ens.meta.update({"feature_spec": {"base_columns": list(feature_spec(cfg).base_columns),
                                      "windows": list(feature_spec(cfg).windows),
                                      "lags": list(feature_spec(cfg).lags)},
                     "clusters": clusters.to_dict()})
    return ens


def _spec_from_meta(meta: dict) -> FeatureSpec:
    s = meta["feature_spec"]
    return FeatureSpec(tuple(s["base_columns"]), tuple(s["windows"]), tuple(s["lags"]))


def forecast_gbdt(ens: GbdtEnsemble, hist: Dataset) -> np.ndarray:
    """``(n_turbines, 288)`` forecast from an imputed history whose last step is the origin."""
    spec = _spec_from_meta(ens.meta)
    clusters = ClusterModel.from_dict(ens.meta["clusters"])
    need = spec.history_needed
    if hist.n_steps < need + 1:
        raise DataError(f"gbdt needs {need + 1} history steps, got {hist.n_steps}")
    tail = hist.slice_steps(hist.n_steps - need - 1, hist.n_steps)
    cids = clusters.assignment_for(tail.turbine_ids)
    horizons = np.arange(1, FORECAST_LEN + 1)
    frame = engineer_features(tail, spec, [tail.n_steps - 1], horizons, cids)
    if tuple(frame.names) != tuple(ens.feature_names):
        raise ArtifactError("gbdt feature columns differ from the trained model")
    pred = ens.predict_frame(frame, np.repeat(cids, FORECAST_LEN))
    return pred.reshape(hist.n_turbines, FORECAST_LEN)


# --------------------------------------------------------------------------
# GRU


@dataclass(eq=False)
class GruMember:
    turbine_ids: np.ndarray
    scaler: RobustScaler
    net: GruNetwork
    history: list = field(default_factory=list)


@dataclass(eq=False)
class GruForecaster:
    """One network and scaler per GRU cluster."""

    members: dict  # cluster -> GruMember
    pretrain_input: int
    finetune_input: int

    def save(self, path) -> None:
        arrays, meta = {}, {}
        for c, m in sorted(self.members.items()):
            p, net_meta = m.net.state()
            arrays.update({f"c{c}.{k}": v for k, v in p.items()})
            meta[str(c)] = {"turbine_ids": m.turbine_ids.tolist(), "scaler": m.scaler.to_dict(),
                            "net": net_meta, "history": m.history}
        save_arrays(path, arrays, {"kind": "gru_forecaster", "members": meta,
                                   "pretrain_input": self.pretrain_input,
                                   "finetune_input": self.finetune_input})

    @classmethod
    def load(cls, path) -> "GruForecaster":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "gru_forecaster":
            raise ArtifactError(f"{path} is not a gru forecaster artifact")
        members = {}
        for key, m in meta["members"].items():
            prefix = f"c{key}."
            params = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            members[int(key)] = GruMember(np.array(m["turbine_ids"], dtype=np.int64),
                                          RobustScaler.from_dict(m["scaler"]),
                                          GruNetwork.from_state(params, m["net"]), m["history"])
        return cls(members, int(meta["pretrain_input"]), int(meta["finetune_input"]))


def _train_member(c: int, rows: np.ndarray, imputed: Dataset, raw: Dataset, cfg: PipelineConfig,
                  split: Split) -> GruMember:
    sub = imputed.subset(rows)
    train_raw = raw.subset(rows)
    scaler = fit_scaler(train_raw, FIELDS, step_slice=slice(0, split.train_end))
    feats = apply_scaler(scaler, sub.values, FIELDS)
    target = feats[:, :, FIELDS.index("patv")]
    mask = train_raw.validity == Validity.VALID
    net_cfg, tcfg = gru_configs(cfg, len(rows), seed_offset=c)
    ids = np.arange(len(rows))

    def windows(input_len, output_len, stop, start=0):
        return build_window_set(feats, target, mask, ids, input_len, output_len, tcfg.stride,
                                start, stop, sub.step0)

    pre = windows(tcfg.pretrain_input, LONG_HEAD, split.train_end)
    fine = windows(tcfg.finetune_input, SHORT_HEAD, split.train_end)
    pre_valid = fine_valid = None
    if split.valid_end > split.train_end:
        pre_valid = windows(tcfg.pretrain_input, LONG_HEAD, split.valid_end,
                            max(0, split.train_end - tcfg.pretrain_input))
        fine_valid = windows(tcfg.finetune_input, SHORT_HEAD, split.valid_end,
                             max(0, split.train_end - tcfg.finetune_input))
    if len(pre) == 0:
        raise DataError(f"no gru pretraining windows for cluster {c}; enlarge train_days")
    net = GruNetwork.create(net_cfg, seed=tcfg.seed)
    history = train_continual(net, pre, fine, tcfg, pre_valid, fine_valid)
    return GruMember(sub.turbine_ids.copy(), scaler, net, history)


def train_gru_stage(imputed: Dataset, raw: Dataset, clusters: ClusterModel, cfg: PipelineConfig,
                    threads: int = 1) -> GruForecaster:
    split = split_bounds(raw.n_steps, cfg)
    groups = _cluster_rows(imputed, clusters)
    keys = sorted(groups)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        members = list(pool.map(lambda c: _train_member(c, groups[c], imputed, raw, cfg, split), keys))
    return GruForecaster(dict(zip(keys, members)), cfg.gru.pretrain_input, cfg.gru.finetune_input)


def forecast_gru(model: GruForecaster, hist: Dataset, stitched: bool = True) -> np.ndarray:
    """``(n_turbines, 288)`` forecast in kW from an imputed history ending at the origin.

    With ``stitched`` the first 36 steps come from the short head when it was
    trained; otherwise the long head supplies all 288 steps.
    """
    L, Ls = model.pretrain_input, model.finetune_input
    if hist.n_steps < L:
        raise DataError(f"gru needs {L} history steps, got {hist.n_steps}")
    out = np.full((hist.n_turbines, FORECAST_LEN), np.nan)
    tod = hist.time_of_day()
    row_of = {int(t): i for i, t in enumerate(hist.turbine_ids)}
    for m in model.members.values():
        rows = np.array([row_of[int(t)] for t in m.turbine_ids])
        feats = apply_scaler(m.scaler, hist.values[rows], FIELDS)
        ids = np.arange(rows.size)
        long_in = feats[:, -L:]
        pred = m.net.predict(long_in, np.broadcast_to(tod[-L:], (rows.size, L)), ids, LONG_HEAD)
        if stitched and m.net.short_head_trained:
            short = m.net.predict(feats[:, -Ls:], np.broadcast_to(tod[-Ls:], (rows.size, Ls)), ids, SHORT_HEAD)
            pred = stitch(pred, short)
        out[rows] = invert_scaler(m.scaler, pred[..., None], ["patv"])[..., 0]
    if np.isnan(out).any():
        raise ArtifactError("gru forecaster does not cover every turbine")
    return out


# --------------------------------------------------------------------------
# Baseline and combined forecasts


def forecast_persistence(raw: Dataset, origin: int) -> np.ndarray:
    """Repeat each turbine's last VALID power at or before ``origin`` (0 when none)."""
    patv = raw.field("patv")[:, :origin + 1]
    ok = raw.validity[:, :origin + 1] == Validity.VALID
    out = np.zeros(raw.n_turbines)
    for i in range(raw.n_turbines):
        idx = np.flatnonzero(ok[i])
        if idx.size:
            out[i] = patv[i, idx[-1]]
    return np.repeat(out[:, None], FORECAST_LEN, axis=1)


@dataclass(eq=False)
class TrainedModels:
    imputation_clusters: ClusterModel
    gbdt: GbdtEnsemble
    gru: GruForecaster


def raw_forecasts(models: TrainedModels, raw: Dataset, origin: int) -> dict:
    """Un-postprocessed forecasts of every model at ``origin`` using data up to it only."""
    hist_raw = raw.slice_steps(0, origin + 1)
    hist = impute(hist_raw, models.imputation_clusters)
    g = forecast_gbdt(models.gbdt, hist)
    r = forecast_gru(models.gru, hist)
    return {
        "gbdt": g,
        "gru": r,
        "gru_long": forecast_gru(models.gru, hist, stitched=False),
        "ensemble": 0.5 * (g + r),
        "persistence": forecast_persistence(hist_raw, origin),
    }


# --------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalResult:
    reports: dict
    curves: dict
    alpha: float
    alpha_fit: dict | None
    ablation: list
    windows: list
    timing: dict


def _collect(models: TrainedModels, raw: Dataset, windows, threads: int) -> tuple:
    def one(w):
        return raw_forecasts(models, raw, w.origin)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_window = list(pool.map(one, windows))
    preds = {k: np.stack([p[k] for p in per_window]) for k in per_window[0]}
    patv = raw.field("patv")
    truth = np.stack([patv[:, w.target_slice] for w in windows])
    mask = np.stack([raw.validity[:, w.target_slice] == Validity.VALID for w in windows])
    return preds, truth, mask


def fit_alpha_on_valid(models: TrainedModels, raw: Dataset, cfg: PipelineConfig, split: Split,
                       clip_hi: float, threads: int = 1) -> dict | None:
    """Fit the drift factor on ensemble forecasts whose targets fall in the validation period."""
    e = cfg.eval
    first = max(0, split.train_end - e.input_len)
    span = split.valid_end - first
    try:
        windows = reconstruct_test(span, e.n_windows, e.input_len, e.output_len, e.seed, offset=first)
    except ValueError:
        log.warning("validation period too short to fit alpha; keeping alpha=%s", cfg.postprocess.alpha)
        return None
    preds, truth, mask = _collect(models, raw, windows, threads)
    pc = post_config(cfg, alpha=1.0)
    smoothed = postprocess_values(preds["ensemble"], PostConfig(1.0, pc.smooth_window, -math.inf, math.inf))
    adj = fit_alpha(smoothed, np.nan_to_num(truth), mask)
    log.info("fitted alpha=%.6f on %d validation windows", adj.alpha, len(windows))
    return {"alpha": adj.alpha, "loss": adj.loss, "degenerate": adj.degenerate, "iterations": adj.iterations,
            "n_windows": len(windows)}


def evaluate_pipeline(models: TrainedModels, raw: Dataset, cfg: PipelineConfig, alphas=None,
                      threads: int = 1) -> EvalResult:
    """Score every model on rolling test windows with identical post-processing.

    ``alphas`` adds one ensemble row per value to the ablation table, reusing
    the same raw forecasts.
    """
    t0 = time.perf_counter()
    split = split_bounds(raw.n_steps, cfg)
    e = cfg.eval
    windows = reconstruct_test(raw.n_steps - split.test_start, e.n_windows, e.input_len, e.output_len,
                               e.seed, offset=split.test_start)
    clip_hi = cfg.postprocess.clip_hi if cfg.postprocess.clip_hi is not None else training_clip_hi(raw, split)
    alpha, alpha_fit = cfg.postprocess.alpha, None
    if cfg.postprocess.fit_alpha:
        alpha_fit = fit_alpha_on_valid(models, raw, cfg, split, clip_hi, threads)
        if alpha_fit is not None:
            alpha = alpha_fit["alpha"]
    preds, truth, mask = _collect(models, raw, windows, threads)
    pc = post_config(cfg, alpha)
    reports, curves = {}, {}
    for name, p in preds.items():
        post = postprocess_values(p, pc, clip_hi)
        reports[name] = compute_metrics(post, truth, mask)
        curves[name] = step_error_curve(post, truth, mask)
    ablation = []
    for a in alphas or ():
        rep = compute_metrics(postprocess_values(preds["ensemble"], pc, clip_hi, alpha=float(a)), truth, mask)
        ablation.append({"alpha": float(a), **{k: v for k, v in rep.to_dict().items() if k != "extra"}})
    timing = {"eval_seconds": time.perf_counter() - t0}
    return EvalResult(reports, curves, alpha, alpha_fit, ablation, windows, timing)


def predict_at(models: TrainedModels, raw: Dataset, cfg: PipelineConfig, origin: int | None = None,
               alpha: float | None = None) -> tuple:
    """Post-processed ensemble forecast ``(n_turbines, 288)`` plus provenance."""
    origin = raw.n_steps - 1 if origin is None else origin
    split = split_bounds(raw.n_steps, cfg)
    clip_hi = cfg.postprocess.clip_hi if cfg.postprocess.clip_hi is not None else training_clip_hi(raw, split)
    preds = raw_forecasts(models, raw, origin)
    pc = post_config(cfg, alpha)
    values = postprocess_values(preds["ensemble"], pc, clip_hi)
    stitched = all(m.net.short_head_trained for m in models.gru.members.values())
    prov = {"origin": int(origin), "models": ["gbdt", "gru"], "gru_stitched": stitched,
            "order": ["ensemble", "smooth", "alpha", "clip"], "alpha": pc.alpha,
            "smooth_window": pc.smooth_window, "clip": [pc.clip_lo, clip_hi]}
    return values, prov


__all__ = [
    "EvalResult", "GruForecaster", "GruMember", "MODEL_NAMES", "Split", "TrainedModels",
    "build_gbdt_frames", "evaluate_pipeline", "feature_spec", "fit_alpha_on_valid", "fit_clusters",
    "forecast_gbdt", "forecast_gru", "forecast_persistence", "gbdt_params", "gru_configs", "post_config",
    "predict_at", "prepare", "raw_forecasts", "rule_set", "split_bounds", "train_gbdt_stage",
    "train_gru_stage", "training_clip_hi",
]
