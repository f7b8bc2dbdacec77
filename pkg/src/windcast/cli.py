"""``windcast`` command line: one subcommand per pipeline stage.

Configuration precedence, lowest first: built-in defaults, the YAML file from
``--config`` (or ``$WINDCAST_CONFIG``), then ``--set section.key=value``
overrides. Exit status is 0 on success, 1 on usage errors, 2 on data or
artifact errors and 3 on anything unexpected.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import pandas as pd

from . import __version__, pipeline
from ._io import ArtifactError, write_json
from .cluster import ClusterModel
from .config import PipelineConfig, dump_config, load_config
from .evaluation import write_curve, write_report
from .gbdt import GbdtEnsemble
from .ingest import DataError, load_dataset, parse_layout_csv, parse_turbine_csv, save_dataset
from .postprocess import Forecast, write_forecasts
from .preprocess import impute
from .synth import SyntheticFarmSpec, generate_synthetic

log = logging.getLogger("windcast.cli")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# artifact file name -> command that produces it
ARTIFACTS = {
    "dataset": ("dataset.npz", "ingest"),
    "clusters_gru": ("clusters_gru.json", "cluster"),
    "clusters_gbdt": ("clusters_gbdt.json", "cluster"),
    "imputed": ("imputed.npz", "preprocess"),
    "gbdt": ("gbdt.json", "train-gbdt"),
    "gru": ("gru.npz", "train-gru"),
}


class UsageError(Exception):
    pass


class MissingArtifact(ArtifactError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def artifact(cfg: PipelineConfig, key: str) -> Path:
    name, _ = ARTIFACTS[key]
    return cfg.work_dir / name


def require(cfg: PipelineConfig, *keys: str) -> None:
    for key in keys:
        path = artifact(cfg, key)
        if not path.exists():
            raise MissingArtifact(f"missing {path}; run `windcast {ARTIFACTS[key][1]}` first")


def _load_raw(cfg):
    require(cfg, "dataset")
    return load_dataset(artifact(cfg, "dataset"))


def _load_models(cfg) -> pipeline.TrainedModels:
    require(cfg, "clusters_gru", "gbdt", "gru")
    return pipeline.TrainedModels(
        ClusterModel.load(artifact(cfg, "clusters_gru")),
        GbdtEnsemble.load(artifact(cfg, "gbdt")),
        pipeline.GruForecaster.load(artifact(cfg, "gru")),
    )


# --------------------------------------------------------------------------
# Commands


def cmd_synth(cfg, args) -> int:
    spec = SyntheticFarmSpec(n_turbines=args.turbines, n_days=args.days, seed=args.seed,
                             missing_rate=args.missing_rate, abnormal_rate=args.abnormal_rate)
    try:
        farm = generate_synthetic(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    paths = farm.write(args.out, args.prefix)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_OK


def cmd_ingest(cfg, args) -> int:
    ds = parse_turbine_csv(cfg.paths.data)
    layout = parse_layout_csv(cfg.paths.layout) if cfg.paths.layout and Path(cfg.paths.layout).exists() else None
    if layout is None:
        log.warning("no layout file at %s; spatial clustering will be unavailable", cfg.paths.layout)
    ds = pipeline.prepare(ds, cfg)
    save_dataset(ds, artifact(cfg, "dataset"), layout)
    counts = ds.counts()
    print(f"turbines={ds.n_turbines} days={ds.n_days} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    for rule, n in sorted(ds.flag_counts.items()):
        print(f"rule {rule}: {n}")
    return EXIT_OK


def cmd_cluster(cfg, args) -> int:
    ds, layout = _load_raw(cfg)
    gru_c, gbdt_c = pipeline.fit_clusters(ds, layout, cfg)
    gru_c.save(artifact(cfg, "clusters_gru"))
    gbdt_c.save(artifact(cfg, "clusters_gbdt"))
    for name, c in (("gru", gru_c), ("gbdt", gbdt_c)):
        sizes = [len(c.members(k)) for k in range(c.k)]
        print(f"{name}: method={c.method} k={c.k} sizes={sizes}")
    return EXIT_OK


def cmd_preprocess(cfg, args) -> int:
    ds, layout = _load_raw(cfg)
    require(cfg, "clusters_gru")
    imp = impute(ds, ClusterModel.load(artifact(cfg, "clusters_gru")))
    save_dataset(imp, artifact(cfg, "imputed"), layout)
    print(f"imputed {int((ds.validity != 0).sum())} records -> {artifact(cfg, 'imputed')}")
    return EXIT_OK


def _train_inputs(cfg, cluster_key):
    raw, _ = _load_raw(cfg)
    require(cfg, "imputed", cluster_key)
    imp, _ = load_dataset(artifact(cfg, "imputed"))
    return imp, raw, ClusterModel.load(artifact(cfg, cluster_key))


def cmd_train_gbdt(cfg, args) -> int:
    imp, raw, clusters = _train_inputs(cfg, "clusters_gbdt")
    t0 = time.perf_counter()
    ens = pipeline.train_gbdt_stage(imp, raw, clusters, cfg, cfg.n_threads())
    seconds = time.perf_counter() - t0
    ens.save(artifact(cfg, "gbdt"))
    write_json(cfg.work_dir / "gbdt.timing.json", {"schema_version": 1, "train_seconds": seconds})
    print(f"trained {len(ens.models)} gbdt models in {seconds:.1f}s -> {artifact(cfg, 'gbdt')}")
    return EXIT_OK


def cmd_train_gru(cfg, args) -> int:
    imp, raw, clusters = _train_inputs(cfg, "clusters_gru")
    t0 = time.perf_counter()
    model = pipeline.train_gru_stage(imp, raw, clusters, cfg, cfg.n_threads())
    seconds = time.perf_counter() - t0
    model.save(artifact(cfg, "gru"))
    write_json(cfg.work_dir / "gru.timing.json", {"schema_version": 1, "train_seconds": seconds})
    print(f"trained {len(model.members)} gru networks in {seconds:.1f}s -> {artifact(cfg, 'gru')}")
    return EXIT_OK


def cmd_predict(cfg, args) -> int:
    models = _load_models(cfg)
    raw, _ = _load_raw(cfg)
    origin = raw.n_steps - 1 if args.origin is None else args.origin
    if not 0 <= origin < raw.n_steps:
        raise UsageError(f"origin {origin} outside 0..{raw.n_steps - 1}")
    values, prov = pipeline.predict_at(models, raw, cfg, origin)
    forecasts = [Forecast(int(t), origin, values[i], {"models": ["gbdt", "gru"]})
                 for i, t in enumerate(raw.turbine_ids)]
    out = Path(args.out) if args.out else cfg.work_dir / "forecasts.csv"
    write_forecasts(forecasts, out, {**prov, "config_hash": cfg.hash()})
    print(f"wrote {len(forecasts)} x 288 forecasts from origin {origin} -> {out}")
    return EXIT_OK


def cmd_evaluate(cfg, args) -> int:
    models = _load_models(cfg)
    raw, _ = _load_raw(cfg)
    result = pipeline.evaluate_pipeline(models, raw, cfg, alphas=args.alpha, threads=cfg.n_threads())
    meta = {"config_hash": cfg.hash(), "alpha": result.alpha, "alpha_fit": result.alpha_fit,
            "windows": [w.start for w in result.windows]}
    write_report(cfg.work_dir / "report.json", result.reports, meta)
    write_curve(cfg.work_dir / "error_curve.csv", result.curves)
    write_json(cfg.work_dir / "eval.timing.json", {"schema_version": 1, **result.timing})
    for name, rep in result.reports.items():
        print(f"{name:12s} {rep.summary()}")
    if result.ablation:
        table = pd.DataFrame(result.ablation)
        table.to_csv(cfg.work_dir / "alpha_ablation.csv", index=False, float_format="%.6f")
        print(table[["alpha", "overall_score", "rmse", "mae"]].to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "preprocess": cmd_preprocess,
    "train-gbdt": cmd_train_gbdt,
    "train-gru": cmd_train_gru,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (default: $WINDCAST_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. gbdt.max_leaves=31 (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="windcast", description="Wind farm power forecasting pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic farm")
    p.add_argument("--out", required=True)
    p.add_argument("--prefix", default="synth")
    p.add_argument("--turbines", type=int, default=10)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--abnormal-rate", type=float, default=0.0)

    for name, text in (("ingest", "parse and flag raw data"), ("cluster", "cluster turbines"),
                       ("preprocess", "impute invalid records"), ("train-gbdt", "train GBDT ensemble"),
                       ("train-gru", "train GRU networks")):
        sub.add_parser(name, parents=[common], help=text)

    p = sub.add_parser("predict", parents=[common], help="forecast the next 288 steps")
    p.add_argument("--origin", type=int, default=None, help="origin step index (default: last step)")
    p.add_argument("--out", default=None)

    p = sub.add_parser("evaluate", parents=[common], help="score all models on rolling test windows")
    p.add_argument("--alpha", type=float, nargs="+", default=None, metavar="A",
                   help="alpha values for the ensemble ablation table")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    log.setLevel(logging.INFO)
    try:
        cfg = load_config(args.config, args.set)
        if args.threads is not None:
            cfg.threads = args.threads
    except (ValueError, FileNotFoundError, TypeError) as exc:
        print(f"windcast: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("command=%s config_hash=%s", args.command, cfg.hash())
    try:
        if args.command != "synth":
            cfg.work_dir.mkdir(parents=True, exist_ok=True)
            dump_config(cfg, cfg.work_dir / f"config.{args.command}.yaml")
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"windcast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ArtifactError) as exc:
        print(f"windcast: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"windcast: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
