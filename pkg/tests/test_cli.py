import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest
from conftest import fast_overrides

from windcast.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

CHAIN = ["ingest", "cluster", "preprocess", "train-gbdt", "train-gru"]


def run(cmd, sets, *extra):
    args = [cmd, *extra]
    for s in sets:
        args += ["--set", s]
    return main(args)


@pytest.fixture(scope="module")
def work(fast_farm, tmp_path_factory):
    """Work directory after running every training stage once."""
    _, paths = fast_farm
    wd = tmp_path_factory.mktemp("work")
    sets = fast_overrides(wd, paths["data"], paths["layout"])
    for cmd in CHAIN:
        assert run(cmd, sets, "--threads", "1") == EXIT_OK, cmd
    return wd, sets


def test_chain_writes_every_artifact(work):
    wd, _ = work
    for name in ("dataset.npz", "clusters_gru.json", "clusters_gbdt.json", "imputed.npz", "gbdt.json", "gru.npz"):
        assert (wd / name).exists(), name


def test_predict_writes_288_steps_per_turbine(work, tmp_path, capsys):
    wd, sets = work
    out = tmp_path / "f.csv"
    assert run("predict", sets, "--out", str(out)) == EXIT_OK
    df = pd.read_csv(out, comment="#")
    assert len(df) == 6 * 288
    assert (df.groupby(df.columns[0]).size() == 288).all()
    assert "288 forecasts" in capsys.readouterr().out


def test_evaluate_writes_report_curve_and_ablation(work, capsys):
    wd, sets = work
    assert run("evaluate", sets, "--alpha", "0.95", "1", "1.05", "1.10") == EXIT_OK
    report = json.loads((wd / "report.json").read_text())
    assert {"gbdt", "gru", "ensemble", "persistence"} <= set(report["reports"])
    ablation = pd.read_csv(wd / "alpha_ablation.csv")
    assert len(ablation) == 4
    np.testing.assert_allclose(ablation["alpha"], [0.95, 1.0, 1.05, 1.10])
    assert (wd / "error_curve.csv").exists()
    assert "ensemble" in capsys.readouterr().out


def test_evaluate_is_bit_identical_on_rerun(work):
    wd, sets = work
    assert run("evaluate", sets) == EXIT_OK
    first = (wd / "report.json").read_bytes()
    assert run("evaluate", sets) == EXIT_OK
    assert (wd / "report.json").read_bytes() == first


def test_retraining_reproduces_artifacts(work, fast_farm, tmp_path):
    wd, _ = work
    _, paths = fast_farm
    sets = fast_overrides(tmp_path, paths["data"], paths["layout"])
    for cmd in CHAIN:
        assert run(cmd, sets, "--threads", "1") == EXIT_OK
    for name in ("clusters_gru.json", "gbdt.json", "gru.npz"):
        assert (tmp_path / name).read_bytes() == (wd / name).read_bytes(), name


def test_stage_rerun_leaves_other_artifacts_untouched(work):
    wd, sets = work
    before = {p.name: p.read_bytes() for p in wd.iterdir() if p.suffix in (".npz", ".json")
              and "timing" not in p.name and p.name != "report.json"}
    assert run("train-gbdt", sets, "--threads", "1") == EXIT_OK
    after = {name: (wd / name).read_bytes() for name in before}
    assert after == before


@pytest.mark.parametrize("cmd,needs", [
    ("cluster", "ingest"), ("preprocess", "ingest"), ("train-gbdt", "ingest"),
    ("predict", "cluster"), ("evaluate", "cluster"),
])
def test_missing_artifact_names_the_producing_command(cmd, needs, tmp_path, capsys):
    assert run(cmd, [f"paths.work_dir={tmp_path}"]) == EXIT_DATA
    assert f"windcast {needs}" in capsys.readouterr().err


def test_predict_without_models_points_at_training(work, tmp_path, capsys):
    wd, _ = work
    (tmp_path / "dataset.npz").write_bytes((wd / "dataset.npz").read_bytes())
    (tmp_path / "clusters_gru.json").write_bytes((wd / "clusters_gru.json").read_bytes())
    assert run("predict", [f"paths.work_dir={tmp_path}"]) == EXIT_DATA
    assert "windcast train-gbdt" in capsys.readouterr().err


def test_missing_data_file_is_a_data_error(tmp_path, capsys):
    assert run("ingest", [f"paths.work_dir={tmp_path}", f"paths.data={tmp_path / 'none.csv'}"]) == EXIT_DATA


def test_bad_override_is_a_usage_error(tmp_path, capsys):
    assert run("cluster", ["gbdt.no_such_key=1"]) == EXIT_USAGE
    assert "config error" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == EXIT_USAGE


def test_predict_origin_out_of_range(work, capsys):
    _, sets = work
    assert run("predict", sets, "--origin", "999999") == EXIT_USAGE


def test_synth_writes_csvs(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--turbines", "3", "--days", "5"]) == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "synth_data.csv", "synth_injections.csv", "synth_layout.csv"]


def test_synth_rejects_bad_spec(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--turbines", "0"]) == EXIT_USAGE


def test_console_entry_point_reports_version():
    out = subprocess.run([sys.executable, "-m", "windcast", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("windcast ")
