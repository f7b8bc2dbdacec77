import numpy as np
import pytest

from windcast.ingest import flag_abnormal, parse_layout_csv, parse_turbine_csv
from windcast.synth import CAPACITY_KW, SyntheticFarmSpec, generate_synthetic, power_curve


def test_power_curve():
    np.testing.assert_array_equal(power_curve([0.0, 2.5, 12.0, 20.0]), [0.0, 0.0, CAPACITY_KW, CAPACITY_KW])
    v = np.linspace(2.6, 11.9, 50)
    assert np.all(np.diff(power_curve(v)) > 0)


def test_clean_farm_ingests_clean(tmp_path):
    farm = generate_synthetic(SyntheticFarmSpec(n_turbines=4, n_days=5, seed=1))
    paths = farm.write(tmp_path)
    ds = flag_abnormal(parse_turbine_csv(paths["data"]))
    assert ds.counts() == {"VALID": 4 * 5 * 144, "ABNORMAL": 0, "MISSING": 0}
    assert len(parse_layout_csv(paths["layout"])) == 4


def test_injection_counts_recoverable(tmp_path):
    spec = SyntheticFarmSpec(n_turbines=10, n_days=30, seed=2, missing_rate=0.01, abnormal_rate=0.005)
    farm = generate_synthetic(spec)
    paths = farm.write(tmp_path)
    ds = flag_abnormal(parse_turbine_csv(paths["data"]))
    log = farm.injections
    n_missing = int(log.kind.isin(["row_absent", "field_blank"]).sum())
    assert n_missing == round(0.01 * 43_200)
    assert ds.counts()["MISSING"] == n_missing
    assert ds.counts()["ABNORMAL"] == int((~log.kind.isin(["row_absent", "field_blank"])).sum())
    assert ds.flag_counts["negative_power"] == int((log.kind == "negative_power").sum())
    for row in log.itertuples():
        from windcast.ingest import parse_timestamp
        rec = ds.record(row.TurbID, row.Day, parse_timestamp(row.Tmstamp))
        expected = "MISSING" if row.kind in ("row_absent", "field_blank") else "ABNORMAL"
        assert rec.validity.name == expected


def test_deterministic(tmp_path):
    spec = SyntheticFarmSpec(n_turbines=3, n_days=5, seed=9, missing_rate=0.02)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.data.equals(b.data) and a.injections.equals(b.injections)
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    assert (tmp_path / "a/synth_data.csv").read_bytes() == (tmp_path / "b/synth_data.csv").read_bytes()


@pytest.mark.parametrize("kw", [dict(missing_rate=1.0), dict(abnormal_rate=-0.1), dict(n_days=4),
                                dict(n_turbines=0), dict(missing_rate=0.6, abnormal_rate=0.5)])
def test_bad_spec(kw):
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticFarmSpec(**kw))


def test_neighbours_more_correlated():
    farm = generate_synthetic(SyntheticFarmSpec(n_turbines=16, n_days=10, seed=0))
    xy = farm.layout[["x", "y"]].to_numpy()
    corr = np.corrcoef(farm.patv)
    d = np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(axis=2))
    iu = np.triu_indices(16, 1)
    dd, cc = d[iu], corr[iu]
    near, far = dd <= np.quantile(dd, 0.25), dd >= np.quantile(dd, 0.75)
    assert cc[near].mean() > cc[far].mean()
