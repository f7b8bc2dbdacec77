import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_farm(tmp_path_factory):
    """A 6-turbine, 8-day synthetic farm with injected faults, written to CSV."""
    from windcast.synth import SyntheticFarmSpec, generate_synthetic

    farm = generate_synthetic(SyntheticFarmSpec(n_turbines=6, n_days=8, seed=3,
                                                missing_rate=0.01, abnormal_rate=0.01))
    paths = farm.write(tmp_path_factory.mktemp("farm"))
    return farm, paths


def make_dataset(patv, validity=None, ids=None, fill=5.0):
    """Dataset whose power column is ``patv`` (n, s) and other fields constant."""
    from windcast.ingest import FIELDS, Dataset

    patv = np.asarray(patv, dtype=np.float64)
    n, s = patv.shape
    values = np.full((n, s, len(FIELDS)), fill)
    values[:, :, FIELDS.index("patv")] = patv
    validity = np.zeros((n, s), np.int8) if validity is None else np.asarray(validity, np.int8)
    ids = np.arange(1, n + 1) if ids is None else np.asarray(ids)
    return Dataset(ids, 1, values, validity, np.full((n, s), -1, np.int8))


FAST = {
    "split": {"train_days": 4, "valid_days": 3, "test_days": 3},
    "clustering": {"k_gru": 2, "k_gbdt": 2},
    "preprocess": {"windows": [6, 36], "lags": [1, 6, 36]},
    "gbdt": {"buckets": [1, 36, 288], "num_boost_round": 8, "max_leaves": 7, "origin_stride": 12,
             "horizons_per_bucket": 3, "learning_rate": 0.2},
    "gru": {"hidden": 8, "numeric_dim": 8, "time_dim": 2, "id_dim": 2, "pretrain_epochs": 1,
            "finetune_epochs": 1, "stride": 24, "batch_size": 32, "learning_rate": 1e-3},
    "eval": {"n_windows": 4, "input_len": 72},
}


def fast_overrides(work_dir, data=None, layout=None) -> list:
    """``--set`` strings for a small, quick pipeline run."""
    out = [f"paths.work_dir={work_dir}"]
    if data is not None:
        out.append(f"paths.data={data}")
    if layout is not None:
        out.append(f"paths.layout={layout}")
    for section, values in FAST.items():
        for key, v in values.items():
            out.append(f"{section}.{key}={v}")
    return out


@pytest.fixture(scope="session")
def fast_farm(tmp_path_factory):
    """A 6-turbine, 10-day farm sized for the FAST split."""
    from windcast.synth import SyntheticFarmSpec, generate_synthetic

    farm = generate_synthetic(SyntheticFarmSpec(n_turbines=6, n_days=10, seed=5,
                                                missing_rate=0.01, abnormal_rate=0.01))
    return farm, farm.write(tmp_path_factory.mktemp("fastfarm"))


@pytest.fixture(scope="session")
def fast_models(fast_farm):
    """Models trained on ``fast_farm`` with the FAST config, shared across tests."""
    from windcast import pipeline
    from windcast.config import from_dict
    from windcast.ingest import parse_layout_csv, parse_turbine_csv
    from windcast.preprocess import impute

    _, paths = fast_farm
    cfg = from_dict(FAST)
    raw = pipeline.prepare(parse_turbine_csv(paths["data"]), cfg)
    layout = parse_layout_csv(paths["layout"])
    cg, cb = pipeline.fit_clusters(raw, layout, cfg)
    imp = impute(raw, cg)
    models = pipeline.TrainedModels(cg, pipeline.train_gbdt_stage(imp, raw, cb, cfg),
                                    pipeline.train_gru_stage(imp, raw, cg, cfg))
    return cfg, raw, models


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
