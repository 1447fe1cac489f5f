import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from stam.data import (
    CsvSchema,
    RawSeries,
    StandardScaler,
    SynthSpec,
    apply,
    fit_standardize,
    from_manifest,
    load_csv,
    load_manifest,
    make_windows,
    prepare,
    save_csv,
    save_manifest,
    split_bounds,
    split_chronological,
    synth_generate,
    synth_schema,
    window_count,
)
from stam.errors import ConfigError, DataError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def series(values, columns=None, target=None):
    values = np.asarray(values, dtype=float)
    columns = columns or [f"c{i}" for i in range(values.shape[1])]
    return RawSeries(columns, values, target or columns[-1])


# --- load_csv --------------------------------------------------------------------


def test_load_simple_file(tmp_path):
    s = load_csv(write(tmp_path / "a.csv", "a,b\n1,2\n3,4\n5,6\n"), CsvSchema(target="b"))
    assert len(s) == 3 and s.columns == ["a", "b"]
    np.testing.assert_array_equal(s.column("b"), [2, 4, 6])


def test_categorical_first_appearance_codes(tmp_path):
    s = load_csv(write(tmp_path / "a.csv", "w,y\nNE,1\nSE,2\nNE,3\n"), CsvSchema(target="y", categorical=("w",)))
    np.testing.assert_array_equal(s.column("w"), [0, 1, 0])
    assert s.categories == {"w": {"NE": 0, "SE": 1}}


def test_head_trim_and_forward_fill(tmp_path):
    text = "x,y\n1,NA\n2,\n3,10\n4,NA\n,12\n6,13\n"
    s = load_csv(write(tmp_path / "a.csv", text), CsvSchema(target="y"))
    np.testing.assert_array_equal(s.column("y"), [10, 10, 12, 13])
    np.testing.assert_array_equal(s.column("x"), [3, 4, 4, 6])


def test_column_selection_and_drop(tmp_path):
    path = write(tmp_path / "a.csv", "No,a,b,y\n1,1,2,3\n2,4,5,6\n")
    assert load_csv(path, CsvSchema(target="y", drop=("No",))).columns == ["a", "b", "y"]
    assert load_csv(path, CsvSchema(target="y", columns=("y", "a"))).columns == ["y", "a"]


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="empty"):
        load_csv(write(tmp_path / "e.csv", ""), CsvSchema(target="y"))
    with pytest.raises(DataError, match="unknown column"):
        load_csv(write(tmp_path / "u.csv", "a,b\n1,2\n"), CsvSchema(target="y"))
    with pytest.raises(DataError, match=r"row 3, column 'a'"):
        load_csv(write(tmp_path / "p.csv", "a,y\n1,2\nzz,3\n"), CsvSchema(target="y"))
    with pytest.raises(DataError, match="fields"):
        load_csv(write(tmp_path / "w.csv", "a,y\n1,2,3\n"), CsvSchema(target="y"))


def test_load_is_deterministic(tmp_path):
    path = write(tmp_path / "a.csv", "w,y\nE,1\nW,2\n")
    a, b = load_csv(path, CsvSchema("y", categorical=("w",))), load_csv(path, CsvSchema("y", categorical=("w",)))
    assert np.array_equal(a.values, b.values) and a.categories == b.categories


def test_schema_dict_round_trip():
    schema = CsvSchema("y", columns=("a", "y"), categorical=("a",), delimiter=";")
    assert CsvSchema.from_dict(json.loads(json.dumps(schema.to_dict()))) == schema
    with pytest.raises(ConfigError):
        CsvSchema.from_dict({"target": "y", "colour": 1})


# --- splits -----------------------------------------------------------------------


def test_split_ten_rows():
    parts = split_chronological(series(np.arange(20).reshape(10, 2)))
    assert [len(p) for p in parts] == [6, 2, 2]
    assert parts[2].values[-1, 0] == 18


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 5000))
def test_split_floor_rounding_remainder_to_test(rows):
    b = split_bounds(rows)
    assert b[1] == int(rows * 0.6) and b[2] - b[1] == int(rows * 0.2) and b[3] == rows


def test_split_errors():
    with pytest.raises(ConfigError):
        split_bounds(10, (0.5, 0.5, 0.1))
    with pytest.raises(DataError):
        split_chronological(series(np.ones((10, 1)) * np.arange(10)[:, None]), min_rows=3)


# --- scaler -------------------------------------------------------------------------


def test_scaler_hand_case_and_round_trip():
    train = series([[0.0], [2.0]])
    scaler = fit_standardize(train)
    assert scaler.mean[0] == 1.0 and scaler.std[0] == 1.0
    np.testing.assert_array_equal(apply(scaler, train).values, [[-1.0], [1.0]])
    other = series(np.random.default_rng(0).standard_normal((20, 1)) * 7 + 3)
    back = scaler.inverse_transform(scaler.transform(other))
    np.testing.assert_allclose(back.values, other.values, atol=1e-10)
    assert StandardScaler.from_dict(json.loads(json.dumps(scaler.to_dict()))).mean[0] == 1.0


def test_scaler_rejects_constant_column_by_name():
    with pytest.raises(DataError, match="'flat'"):
        fit_standardize(series([[1.0, 5.0], [2.0, 5.0]], columns=["x", "flat"]))


def test_scaler_fitted_on_train_only():
    rng = np.random.default_rng(1)
    full = series(np.cumsum(rng.standard_normal((100, 2)), axis=0))
    train, val, _ = split_chronological(full)
    scaler = fit_standardize(train)
    refit = fit_standardize(train)
    np.testing.assert_array_equal(scaler.mean, refit.mean)
    np.testing.assert_array_equal(scaler.mean, train.values.mean(axis=0))
    assert not np.allclose(scaler.transform(val).values.mean(axis=0), 0.0)


def test_scaler_column_mismatch():
    scaler = fit_standardize(series([[0.0], [2.0]]))
    with pytest.raises(DataError):
        scaler.transform(series([[0.0, 1.0]]))


# --- windows ------------------------------------------------------------------------------


def test_window_count_boundaries():
    assert len(make_windows(series(np.ones((10, 2)) * np.arange(10)[:, None]), 5, 4)) == 2
    assert len(make_windows(series(np.ones((9, 2)) * np.arange(9)[:, None]), 5, 4)) == 1
    with pytest.raises(DataError):
        make_windows(series(np.ones((8, 2))), 5, 4)
    with pytest.raises(ConfigError):
        make_windows(series(np.ones((8, 2))), 0, 4)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_windows_match_brute_force_indices(stride):
    values = np.arange(60, dtype=float).reshape(20, 3) + 0.5
    s = series(values, columns=["a", "b", "y"])
    ds = make_windows(s, 4, 3, stride, inputs=["y", "a"])
    X, y = O.window_oracle(values.tolist(), 2, [2, 0], 4, 3, stride)
    np.testing.assert_array_equal(ds.X, X)
    np.testing.assert_array_equal(ds.y, y)
    assert len(ds) == window_count(20, 4, 3, stride)


def test_window_starts_recover_series():
    values = np.random.default_rng(2).standard_normal((30, 2))
    ds = make_windows(series(values), 3, 2)
    rebuilt = np.concatenate([ds.X[:, :, 0], ds.X[-1, :, 1:].T], axis=0)
    np.testing.assert_array_equal(rebuilt, values[: len(ds) + 2])


def test_windows_include_target_by_default():
    ds = make_windows(series(np.arange(20.0).reshape(10, 2), columns=["x", "y"]), 3, 1)
    assert ds.input_names == ["x", "y"]


# --- synthetic generator ---------------------------------------------------------------


def test_synth_noiseless_is_exact_lag():
    s = synth_generate(SynthSpec(n_vars=3, length=200, relevant=(0,), lag=1, noise_std=0.0))
    np.testing.assert_allclose(s.column("y")[1:], s.column("x0")[:-1], rtol=0, atol=0)


def test_synth_correlation_with_planted_driver():
    s = synth_generate(SynthSpec(n_vars=4, length=5000, relevant=(0,), noise_std=0.1, seed=3))
    assert np.corrcoef(s.column("y")[1:], s.column("x0")[:-1])[0, 1] > 0.95


def test_synth_planted_inputs_explain_target_exactly():
    spec = SynthSpec(n_vars=5, length=300, relevant=(1, 3), lag=2, noise_std=0.0, weights=(0.7, -1.2))
    s = synth_generate(spec)
    pred = 0.7 * s.column("x1")[:-2] - 1.2 * s.column("x3")[:-2]
    np.testing.assert_allclose(s.column("y")[2:], pred, atol=1e-12)


def test_synth_determinism_and_validation():
    a = synth_generate(SynthSpec(seed=4, length=100))
    b = synth_generate(SynthSpec(seed=4, length=100))
    assert np.array_equal(a.values, b.values)
    with pytest.raises(ConfigError):
        SynthSpec(relevant=())
    with pytest.raises(ConfigError):
        SynthSpec(lag=0, noise_std=-1)
    assert SynthSpec.from_dict(SynthSpec(relevant=(2,)).to_dict()) == SynthSpec(relevant=(2,))


def test_synth_drivers_unit_variance():
    s = synth_generate(SynthSpec(n_vars=3, length=20_000, seed=5))
    np.testing.assert_allclose(s.values[:, :3].std(axis=0), 1.0, atol=0.05)


# --- prepare and manifests ----------------------------------------------------------------


def test_prepare_and_manifest_reproduce_datasets(tmp_path):
    spec = SynthSpec(n_vars=3, length=200, seed=6)
    path = tmp_path / "s.csv"
    save_csv(synth_generate(spec), path)
    prepared = prepare(path, synth_schema(spec), 4, 2)
    m = prepared.manifest
    assert m["windows"] == {k: len(prepared.split(k)) for k in ("train", "val", "test")}
    assert m["inputs"] == ["x0", "x1", "x2"]
    save_manifest(m, tmp_path / "d.json")
    again = from_manifest(load_manifest(tmp_path / "d.json"))
    for k in ("train", "val", "test"):
        assert np.array_equal(again.split(k).X, prepared.split(k).X)
        assert np.array_equal(again.split(k).y, prepared.split(k).y)
    with pytest.raises(ConfigError):
        prepared.split("holdout")


def test_manifest_detects_changed_source(tmp_path):
    path = write(tmp_path / "a.csv", "x,y\n" + "".join(f"{i},{i * i % 7}\n" for i in range(40)))
    prepared = prepare(path, CsvSchema("y"), 3, 1)
    write(path, path.read_text() + "40,3\n")
    with pytest.raises(DataError, match="sha256"):
        from_manifest(prepared.manifest)
    with pytest.raises(DataError):
        load_manifest(tmp_path / "absent.json")


def test_save_csv_round_trip(tmp_path):
    s = synth_generate(SynthSpec(n_vars=2, length=50, seed=7))
    save_csv(s, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", CsvSchema("y"))
    assert np.array_equal(back.values, s.values)
    with open(tmp_path / "s.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["x0", "x1", "y"]
