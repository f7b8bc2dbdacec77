import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from windcast.ingest import (
    AbnormalRuleSet, DataError, FIELDS, Validity, flag_abnormal, load_dataset, parse_layout_csv,
    parse_timestamp, parse_turbine_csv, save_dataset, write_dataset_csv,
)

COLS = ["TurbID", "Day", "Tmstamp", "Wspd", "Wdir", "Etmp", "Itmp", "Ndir", "Pab1", "Pab2", "Pab3", "Prtv", "Patv"]


def frame(n_turbines=2, n_days=1, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(1, n_turbines + 1):
        for d in range(1, n_days + 1):
            for k in range(144):
                vals = rng.uniform(1, 10, size=10)
                vals[-1] = rng.uniform(10, 1000)
                rows.append([t, d, f"{k // 6:02d}:{k % 6 * 10:02d}", *vals])
    return pd.DataFrame(rows, columns=COLS)


def write(df, path):
    df.to_csv(path, index=False)
    return path


def test_complete_file(tmp_path):
    ds = parse_turbine_csv(write(frame(), tmp_path / "d.csv"))
    assert ds.values.shape == (2, 144, 10)
    assert ds.n_turbines * ds.n_steps == 288
    assert ds.counts() == {"VALID": 288, "ABNORMAL": 0, "MISSING": 0}


def test_deleted_row_becomes_missing(tmp_path):
    df = frame()
    gone = df.iloc[150]
    ds = parse_turbine_csv(write(df.drop(index=150), tmp_path / "d.csv"))
    assert ds.counts()["MISSING"] == 1
    rec = ds.record(int(gone.TurbID), int(gone.Day), parse_timestamp(gone.Tmstamp))
    assert rec.validity is Validity.MISSING and np.isnan(rec.patv)


def test_blank_cell_is_missing(tmp_path):
    df = frame()
    df.loc[10, "Wdir"] = np.nan
    ds = parse_turbine_csv(write(df, tmp_path / "d.csv"))
    assert ds.validity[0, 10] == Validity.MISSING
    assert ds.counts()["MISSING"] == 1


def test_row_order_irrelevant(tmp_path):
    df = frame(3, 2)
    a = parse_turbine_csv(write(df, tmp_path / "a.csv"))
    b = parse_turbine_csv(write(df.sample(frac=1.0, random_state=1), tmp_path / "b.csv"))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.validity, b.validity)


def test_duplicate_key_rejected(tmp_path):
    df = frame()
    df = pd.concat([df, df.iloc[[5]]])
    with pytest.raises(DataError, match=r"turbine=1, day=1, slot=00:50"):
        parse_turbine_csv(write(df, tmp_path / "d.csv"))


def test_unknown_turbine_rejected(tmp_path):
    with pytest.raises(DataError, match="unknown turbine id 2"):
        parse_turbine_csv(write(frame(), tmp_path / "d.csv"), turbine_ids=[1])


def test_unreadable_and_bad_header(tmp_path):
    with pytest.raises(DataError):
        parse_turbine_csv(tmp_path / "absent.csv")
    with pytest.raises(DataError, match="header"):
        parse_turbine_csv(write(frame().drop(columns=["Patv"]), tmp_path / "d.csv"))


def test_schema_remap(tmp_path):
    df = frame().rename(columns={"Patv": "power"})
    ds = parse_turbine_csv(write(df, tmp_path / "d.csv"), schema={"patv": "power"})
    assert ds.counts()["VALID"] == 288


def test_training_scale_record_count():
    assert 134 * 245 * 144 == 4_727_520


@pytest.mark.parametrize("text,slot", [("00:00", 0), ("00:10", 1), ("13:30", 81), ("23:50", 143)])
def test_timestamp(text, slot):
    assert parse_timestamp(text) == slot


@pytest.mark.parametrize("text", ["24:00", "12:05", "noon"])
def test_bad_timestamp(text):
    with pytest.raises(DataError):
        parse_timestamp(text)


def _with(ds, t, **fields):
    values = ds.values.copy()
    for k, v in fields.items():
        values[0, t, FIELDS.index(k)] = v
    return ds.with_values(values)


@pytest.fixture
def one_day(tmp_path):
    return parse_turbine_csv(write(frame(1, 1), tmp_path / "d.csv"))


def test_rules(one_day):
    ds = _with(one_day, 0, patv=-5.0)
    ds = _with(ds, 1, patv=0.0, wspd=6.0)
    ds = _with(ds, 2, patv=120.5, wspd=5.0)
    ds = _with(ds, 3, patv=0.0, wspd=2.0)
    out = flag_abnormal(ds)
    assert out.record(1, 1, 0).validity is Validity.ABNORMAL
    assert out.record(1, 1, 0).rule == "negative_power"
    assert out.record(1, 1, 1).rule == "zero_power_high_wind"
    assert out.record(1, 1, 2).validity is Validity.VALID
    assert out.record(1, 1, 3).validity is Validity.VALID
    assert out.flag_counts == {"negative_power": 1, "zero_power_high_wind": 1}


def test_optional_rules_off_by_default(one_day):
    ds = _with(one_day, 0, pab1=95.0)
    assert flag_abnormal(ds).counts()["ABNORMAL"] == 0
    assert flag_abnormal(ds, AbnormalRuleSet(pitch_angle=True)).flag_counts["pitch_angle"] == 1


def test_threshold_configurable(one_day):
    ds = _with(one_day, 0, patv=0.0, wspd=3.0)
    assert flag_abnormal(ds).counts()["ABNORMAL"] == 1
    assert flag_abnormal(ds, AbnormalRuleSet(wind_speed_threshold=4.0)).counts()["ABNORMAL"] == 0


def test_missing_never_abnormal(tmp_path):
    df = frame(1, 1)
    df.loc[0, "Wdir"] = np.nan
    df.loc[0, "Patv"] = -3.0
    out = flag_abnormal(parse_turbine_csv(write(df, tmp_path / "d.csv")))
    assert out.validity[0, 0] == Validity.MISSING


@given(st.lists(st.tuples(st.integers(0, 143), st.sampled_from(["neg", "zero", "blank"])), max_size=40))
def test_flag_idempotent_and_conserving(edits):
    base = _base()
    values = base.values.copy()
    validity = base.validity.copy()
    for t, kind in edits:
        if kind == "neg":
            values[0, t, FIELDS.index("patv")] = -1.0
        elif kind == "zero":
            values[0, t, FIELDS.index("patv")] = 0.0
            values[0, t, FIELDS.index("wspd")] = 9.0
        else:
            validity[0, t] = Validity.MISSING
    ds = type(base)(base.turbine_ids.copy(), 1, values, validity, base.rule.copy())
    once = flag_abnormal(ds)
    twice = flag_abnormal(once)
    np.testing.assert_array_equal(once.validity, twice.validity)
    np.testing.assert_array_equal(once.rule, twice.rule)
    assert once.flag_counts == twice.flag_counts
    assert sum(once.counts().values()) == ds.n_turbines * ds.n_steps


_BASE = []


def _base():
    if not _BASE:
        from windcast.ingest import Dataset
        vals = np.full((1, 144, 10), 5.0)
        _BASE.append(Dataset(np.array([1]), 1, vals, np.zeros((1, 144), np.int8), np.full((1, 144), -1, np.int8)))
    return _BASE[0]


def test_layout(tmp_path):
    p = tmp_path / "l.csv"
    pd.DataFrame({"TurbID": [1, 2, 3], "x": [0.0, 1.0, 2.0], "y": [0.0, 0.0, 1.0]}).to_csv(p, index=False)
    assert [t.turbine_id for t in parse_layout_csv(p)] == [1, 2, 3]
    pd.DataFrame({"TurbID": [1, 2, 2], "x": [0.0, 1.0, 2.0], "y": [0.0, 0.0, 1.0]}).to_csv(p, index=False)
    with pytest.raises(DataError, match="duplicate turbine id 2"):
        parse_layout_csv(p)
    pd.DataFrame({"TurbID": [1, 2], "x": [0.0, None], "y": [0.0, 0.0]}).to_csv(p, index=False)
    with pytest.raises(DataError, match="turbine 2"):
        parse_layout_csv(p)


def test_layout_134(tmp_path):
    p = tmp_path / "l.csv"
    pd.DataFrame({"TurbID": range(1, 135), "x": np.arange(134.0), "y": np.zeros(134)}).to_csv(p, index=False)
    assert len(parse_layout_csv(p)) == 134


def test_serialization_bit_stable(tmp_path, small_farm):
    _, paths = small_farm
    ds = flag_abnormal(parse_turbine_csv(paths["data"]))
    layout = parse_layout_csv(paths["layout"])
    save_dataset(ds, tmp_path / "a.npz", layout)
    save_dataset(ds, tmp_path / "b.npz", layout)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back, lay = load_dataset(tmp_path / "a.npz")
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.validity, ds.validity)
    assert back.flag_counts == ds.flag_counts
    assert lay == layout


def test_csv_round_trip(tmp_path, small_farm):
    _, paths = small_farm
    ds = parse_turbine_csv(paths["data"]).slice_steps(100, 500)
    write_dataset_csv(ds, tmp_path / "out.csv")
    back = parse_turbine_csv(tmp_path / "out.csv")
    # the written file carries every grid cell; leading/trailing partial days come back MISSING-padded
    a = ds.step0
    np.testing.assert_array_equal(back.values[:, a:a + ds.n_steps], ds.values)
    assert "validity" in pd.read_csv(tmp_path / "out.csv", nrows=1).columns


def test_slice_preserves_time_of_day(small_farm):
    _, paths = small_farm
    ds = parse_turbine_csv(paths["data"])
    sub = ds.slice_steps(150, 400)
    assert sub.first_day == 2 and sub.step0 == 6
    np.testing.assert_array_equal(sub.time_of_day(), ds.time_of_day()[150:400])
    assert sub.record(3, 2, 10).patv == ds.record(3, 2, 10).patv or np.isnan(ds.record(3, 2, 10).patv)
