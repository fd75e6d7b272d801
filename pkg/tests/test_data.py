import numpy as np
import pytest
from hypothesis import given, strategies as st

from gaminet.data import (ConfigurationError, FeatureMeta, IngestionError, RawTable, Schema, fit_transform,
                          inverse_scale, load_csv, load_for_meta, scale, split, split_indices, transform)

from conftest import make_dataset


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    table = load_csv(write(tmp_path, "x,y\n1,2\n3,4\n5.5,6\n"), Schema({"x": "numerical", "y": "response"}))
    assert table.n_rows == 3
    assert table.columns["x"] == [1.0, 3.0, 5.5]
    assert table.response == "y"


def test_header_only_is_empty(tmp_path):
    with pytest.raises(IngestionError, match="empty dataset"):
        load_csv(write(tmp_path, "x,y\n"), Schema({"x": "numerical", "y": "response"}))


def test_bad_cell_names_row_and_column(tmp_path):
    with pytest.raises(IngestionError, match=r"row 3.*'x'"):
        load_csv(write(tmp_path, "x,y\n1,2\nabc,4\n"), Schema({"x": "numerical", "y": "response"}))


def test_missing_column(tmp_path):
    with pytest.raises(IngestionError, match="z"):
        load_csv(write(tmp_path, "x,y\n1,2\n"), Schema({"z": "numerical", "y": "response"}))


def test_missing_value_rejected(tmp_path):
    with pytest.raises(IngestionError, match="missing value"):
        load_csv(write(tmp_path, "x,y\n1,2\n,4\n"), Schema({"x": "numerical", "y": "response"}))


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError, match="not found"):
        load_csv(tmp_path / "nope.csv", Schema({"x": "numerical", "y": "response"}))


def test_quoted_categorical_and_ignore(tmp_path):
    path = write(tmp_path, 'c,skip,y\n"a, b",zz,1\nc,zz,0\n')
    table = load_csv(path, Schema({"c": "categorical", "skip": "ignore", "y": "response"}))
    assert table.columns == {"c": ["a, b", "c"], "y": [1.0, 0.0]}


def test_schema_needs_one_response():
    with pytest.raises(ConfigurationError):
        Schema({"x": "numerical"})
    with pytest.raises(ConfigurationError):
        Schema({"x": "numeric", "y": "response"})


def test_min_max_scaling():
    table = RawTable({"x": [2.0, 4.0, 6.0], "y": [0.0, 1.0, 2.0]}, 3, "y")
    ds = fit_transform(table, Schema({"x": "numerical", "y": "response"}))
    assert ds.features[:, 0].tolist() == [0.0, 0.5, 1.0]


def test_categorical_levels_first_appearance():
    table = RawTable({"c": ["a", "b", "a"], "y": [0.0, 1.0, 2.0]}, 3, "y")
    ds = fit_transform(table, Schema({"c": "categorical", "y": "response"}))
    assert ds.features[:, 0].tolist() == [0, 1, 0]
    assert ds.meta[0].levels == ["a", "b"]


def test_constant_column_dropped(caplog):
    table = RawTable({"k": [5.0, 5.0, 5.0], "x": [1.0, 2.0, 3.0], "y": [0.0, 1.0, 2.0]}, 3, "y")
    ds = fit_transform(table, Schema({"k": "numerical", "x": "numerical", "y": "response"}))
    assert [m.name for m in ds.meta] == ["x"]
    assert ds.dropped[0].name == "k" and ds.dropped[0].constant
    assert "constant" in caplog.text


def test_binary_response_checked():
    table = RawTable({"x": [1.0, 2.0], "y": [0.0, 2.0]}, 2, "y")
    with pytest.raises(IngestionError, match="0/1"):
        fit_transform(table, Schema({"x": "numerical", "y": "response"}), "binary_classification")


def test_transform_reuses_statistics_and_rejects_unseen_level():
    meta = [FeatureMeta("x", "numerical", 0.0, 10.0), FeatureMeta("c", "categorical", levels=["p", "q"])]
    ds = transform(RawTable({"x": [20.0, -5.0], "c": ["q", "p"]}, 2), meta, with_response=False)
    assert ds.features.tolist() == [[2.0, 1.0], [-0.5, 0.0]]  # out-of-range passes through linearly
    with pytest.raises(IngestionError, match=r"'r'.*row 1"):
        transform(RawTable({"x": [1.0, 2.0], "c": ["p", "r"]}, 2), meta, with_response=False)


def test_load_for_meta(tmp_path):
    meta = [FeatureMeta("b", "numerical", 0.0, 1.0), FeatureMeta("a", "categorical", levels=["u"])]
    table = load_for_meta(write(tmp_path, "a,b,extra\nu,0.5,x\n"), meta)
    assert table.columns == {"b": [0.5], "a": ["u"]} and table.response is None


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40))
def test_scaling_round_trip(values):
    m = FeatureMeta("x", "numerical", min(values), max(values))
    if not m.scale_max > m.scale_min:
        return
    s = scale(m, values)
    assert np.all((s >= 0) & (s <= 1))
    back = inverse_scale(m, s)
    assert np.allclose(back, values, rtol=0, atol=1e-12 * max(1.0, np.abs(values).max()))


def test_encoding_is_stable():
    table = RawTable({"c": ["z", "y", "z"], "x": [3.0, 1.0, 2.0], "y": [1.0, 2.0, 3.0]}, 3, "y")
    schema = Schema({"c": "categorical", "x": "numerical", "y": "response"})
    a, b = fit_transform(table, schema), fit_transform(table, schema)
    assert [m.to_dict() for m in a.meta] == [m.to_dict() for m in b.meta]


def test_split_sizes():
    tr, va, te = split_indices(100, 0.2, 0.2, seed=1)
    assert (len(tr), len(va), len(te)) == (64, 16, 20)


def test_split_deterministic():
    a = split_indices(57, seed=9)
    b = split_indices(57, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_too_small():
    with pytest.raises(ConfigurationError):
        split_indices(3, 0.2, 0.2, seed=0)


def test_split_bad_fraction():
    with pytest.raises(ConfigurationError):
        split_indices(10, 1.2, 0.2)


def test_split_without_test_part():
    tr, va, te = split_indices(50, 0.0, 0.2, seed=0)
    assert len(te) == 0 and len(va) == 10 and len(tr) == 40


@given(st.integers(60, 500), st.integers(0, 2 ** 31), st.floats(0.05, 0.5), st.floats(0.05, 0.5))
def test_split_partition(n, seed, tf, vf):
    parts = split_indices(n, tf, vf, seed=seed)
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == list(range(n))


def test_split_dataset(rng):
    ds = make_dataset(rng.random((30, 2)), rng.random(30))
    tr, va, te = split(ds, 0.2, 0.2, seed=0)
    assert tr.n + va.n + te.n == 30 and tr.meta is ds.meta
