import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from meld.data import (
    DataError,
    Dataset,
    Schema,
    SchemaError,
    VariableSpec,
    decode_value,
    encode_value,
    load_dataset,
    parse_schema,
)

DNA = ["A", "C", "G", "T"]


def _desc(*variables):
    return json.dumps({"variables": list(variables)})


def test_parse_categorical_dimension():
    schema = parse_schema(_desc({"name": "dna", "kind": "categorical", "levels": DNA}))
    assert schema[0].dim == 4
    assert schema[0].levels == tuple(DNA)


def test_count_variable_has_dimension_one():
    schema = parse_schema(_desc({"name": "reads", "kind": "count"}))
    assert schema[0].dim == 1
    assert not schema[0].is_categorical


def test_bare_list_descriptor():
    schema = parse_schema(json.dumps([{"name": "x", "kind": "continuous"}]))
    assert schema.names == ["x"]


@pytest.mark.parametrize(
    "variables",
    [
        [{"name": "x", "kind": "continuous"}, {"name": "x", "kind": "count"}],
        [{"name": "x", "kind": "categorical", "levels": ["a"]}],
        [{"name": "x", "kind": "ordinal"}],
        [{"name": "x", "kind": "categorical", "levels": ["a", "a"]}],
        [{"name": "x", "kind": "count", "levels": ["a", "b"]}],
        [{"kind": "count"}],
    ],
)
def test_malformed_schemas_rejected(variables):
    with pytest.raises(SchemaError):
        parse_schema(_desc(*variables))


def test_invalid_json_schema():
    with pytest.raises(SchemaError):
        parse_schema("{not json")


def test_load_mixed_row():
    schema = parse_schema(_desc(
        {"name": "dna", "kind": "categorical", "levels": DNA},
        {"name": "trait", "kind": "continuous"},
    ))
    ds = load_dataset("dna,trait\nG,3.7\n", schema)
    b = ds.encoded()
    np.testing.assert_array_equal(b[0, 0], [0, 0, 1, 0])
    assert b[0, 1, 0] == 3.7
    np.testing.assert_array_equal(ds.column(0), [[0, 0, 1, 0]])


def test_empty_table_gives_empty_dataset():
    schema = parse_schema(_desc({"name": "x", "kind": "continuous"}))
    assert load_dataset("", schema).n == 0
    assert load_dataset("x\n", schema).n == 0


def test_columns_matched_by_header_and_tab_sniffed():
    schema = parse_schema(_desc(
        {"name": "a", "kind": "count"}, {"name": "b", "kind": "categorical", "levels": ["u", "v"]},
    ))
    ds = load_dataset("b\ta\nv\t4\nu\t0\n", schema)
    np.testing.assert_array_equal(ds.codes, [[4, 1], [0, 0]])


@pytest.mark.parametrize(
    "table",
    [
        "dna,trait\nZ,1.0\n",  # unknown level
        "dna,trait\nA,nan\n",  # non-finite
        "dna,trait\nA,\n",  # missing value
        "dna,trait\nA,1.0,7\n",  # ragged
        "dna\nA\n",  # missing column
    ],
)
def test_bad_tables_rejected(table):
    schema = parse_schema(_desc(
        {"name": "dna", "kind": "categorical", "levels": DNA},
        {"name": "trait", "kind": "continuous"},
    ))
    with pytest.raises(DataError):
        load_dataset(table, schema)


@pytest.mark.parametrize("cell", ["-1", "2.5"])
def test_bad_counts_rejected(cell):
    schema = parse_schema(_desc({"name": "c", "kind": "count"}))
    with pytest.raises(DataError):
        load_dataset(f"c\n{cell}\n", schema)


def test_encode_value_examples():
    cat = VariableSpec("y", "categorical", ("a", "b", "c", "d"))
    np.testing.assert_array_equal(encode_value("b", cat), [0, 1, 0, 0])
    assert encode_value(0.0, VariableSpec("x", "continuous")) == 0.0
    assert encode_value(5, VariableSpec("n", "count")) == 5
    with pytest.raises(DataError):
        encode_value("e", cat)


def test_dataset_rejects_out_of_range_codes():
    schema = Schema((VariableSpec("y", "categorical", ("a", "b")),))
    with pytest.raises(DataError):
        Dataset(schema, np.array([[2.0]]))


def test_csv_round_trip():
    schema = parse_schema(_desc(
        {"name": "dna", "kind": "categorical", "levels": DNA},
        {"name": "trait", "kind": "continuous"},
        {"name": "n", "kind": "count"},
    ))
    ds = Dataset(schema, np.array([[0, -1.25, 3], [3, 0.1, 0]]))
    again = load_dataset(ds.to_csv(), schema)
    np.testing.assert_array_equal(again.codes, ds.codes)


@given(st.integers(2, 6).flatmap(lambda d: st.tuples(st.just(d), st.integers(0, d - 1))))
def test_one_hot_round_trip(case):
    d, idx = case
    spec = VariableSpec("y", "categorical", tuple(f"l{c}" for c in range(d)))
    vec = encode_value(spec.levels[idx], spec)
    assert vec.sum() == 1.0
    assert decode_value(vec, spec) == spec.levels[idx]
