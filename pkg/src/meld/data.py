"""Variable schemas, tabular loading and encoding of mixed-type observations.

Categorical cells are encoded as one-hot vectors over the declared levels;
continuous and count cells stay scalars. Internally every observation row is
stored in a padded ``(p, D)`` layout where ``D`` is the largest effective
dimension, so downstream moment code can vectorize across variables.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
COUNT = "count"
KINDS = (CATEGORICAL, CONTINUOUS, COUNT)


class SchemaError(ValueError):
    """Raised for malformed schema descriptors."""


class DataError(ValueError):
    """Raised when a table does not conform to its schema."""


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.levels) < 2:
                raise SchemaError(
                    f"variable {self.name!r}: categorical needs at least 2 levels"
                )
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"variable {self.name!r}: repeated level labels")
        elif self.levels:
            raise SchemaError(f"variable {self.name!r}: only categorical kinds take levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def dim(self) -> int:
        """Effective dimension d_j: number of levels, or 1 for scalars."""
        return len(self.levels) if self.is_categorical else 1

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            out["levels"] = list(self.levels)
        return out


@dataclass(frozen=True)
class Schema:
    variables: tuple[VariableSpec, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate variable name {name!r}")
            seen.add(name)

    def __len__(self) -> int:
        return len(self.variables)

    def __getitem__(self, j: int) -> VariableSpec:
        return self.variables[j]

    def __iter__(self):
        return iter(self.variables)

    @property
    def p(self) -> int:
        return len(self.variables)

    @property
    def dims(self) -> np.ndarray:
        return np.array([v.dim for v in self.variables], dtype=int)

    @property
    def max_dim(self) -> int:
        return int(self.dims.max()) if self.variables else 0

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([v.is_categorical for v in self.variables], dtype=bool)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def cell_mask(self) -> np.ndarray:
        """Boolean ``(p, D)`` mask of the valid rows in the padded layout."""
        D = self.max_dim
        return np.arange(D)[None, :] < self.dims[:, None]

    def to_dict(self) -> dict:
        return {"variables": [v.to_dict() for v in self.variables]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def schema_from_dict(desc: dict | list) -> Schema:
    entries = desc["variables"] if isinstance(desc, dict) else desc
    if not isinstance(entries, list):
        raise SchemaError("schema descriptor must hold a list of variables")
    specs = []
    for entry in entries:
        try:
            name = str(entry["name"])
            kind = str(entry["kind"]).lower()
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed variable entry {entry!r}") from exc
        levels = tuple(str(lv) for lv in entry.get("levels", ()))
        specs.append(VariableSpec(name=name, kind=kind, levels=levels))
    return Schema(tuple(specs))


def parse_schema(descriptor_text: str) -> Schema:
    """Parse a JSON schema descriptor.

    The descriptor is either ``{"variables": [...]}`` or a bare list; each
    entry has ``name``, ``kind`` (categorical | continuous | count) and, for
    categorical variables, ``levels``. Declared order is preserved.
    """
    try:
        desc = json.loads(descriptor_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema is not valid JSON: {exc}") from exc
    return schema_from_dict(desc)


def encode_value(cell, spec: VariableSpec):
    """Encode one cell: one-hot vector for categorical, float otherwise."""
    if spec.is_categorical:
        label = str(cell).strip()
        try:
            idx = spec.levels.index(label)
        except ValueError:
            raise DataError(
                f"variable {spec.name!r}: value {label!r} not among levels {list(spec.levels)}"
            ) from None
        vec = np.zeros(spec.dim)
        vec[idx] = 1.0
        return vec
    value = _parse_number(cell, spec)
    if spec.kind == COUNT:
        if value < 0 or value != math.floor(value):
            raise DataError(f"variable {spec.name!r}: {cell!r} is not a nonnegative integer")
    return value


def decode_value(encoded, spec: VariableSpec):
    """Inverse of :func:`encode_value`."""
    if spec.is_categorical:
        return spec.levels[int(np.argmax(encoded))]
    return float(encoded)


def _parse_number(cell, spec: VariableSpec) -> float:
    if isinstance(cell, str):
        text = cell.strip()
        if text == "":
            raise DataError(f"variable {spec.name!r}: missing value")
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"variable {spec.name!r}: {cell!r} is not numeric") from None
    else:
        value = float(cell)
    if not math.isfinite(value):
        raise DataError(f"variable {spec.name!r}: non-finite value {cell!r}")
    return value


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded observations.

    ``codes`` holds the raw value per cell (level index for categorical
    variables, the number otherwise) with shape ``(n, p)``. The padded one-hot
    / scalar encoding ``b`` of shape ``(n, p, D)`` is derived on demand.
    """

    schema: Schema
    codes: np.ndarray = field(repr=False)

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=float)
        if codes.ndim != 2 or codes.shape[1] != self.schema.p:
            raise DataError(
                f"codes must have shape (n, {self.schema.p}), got {codes.shape}"
            )
        for j, spec in enumerate(self.schema):
            col = codes[:, j]
            if spec.is_categorical:
                if np.any((col < 0) | (col >= spec.dim) | (col != np.floor(col))):
                    raise DataError(f"variable {spec.name!r}: level index out of range")
            elif not np.all(np.isfinite(col)):
                raise DataError(f"variable {spec.name!r}: non-finite value")
            elif spec.kind == COUNT and np.any((col < 0) | (col != np.floor(col))):
                raise DataError(f"variable {spec.name!r}: counts must be nonnegative integers")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def p(self) -> int:
        return self.schema.p

    def encoded(self, rows: slice | np.ndarray | None = None) -> np.ndarray:
        """Padded encoding ``b`` with shape ``(n, p, D)``."""
        codes = self.codes if rows is None else self.codes[rows]
        return encode_codes(codes, self.schema)

    def column(self, j: int) -> np.ndarray:
        """Encoded column j: ``(n, d_j)`` one-hot for categorical, ``(n,)`` otherwise."""
        spec = self.schema[j]
        col = self.codes[:, j]
        if spec.is_categorical:
            return np.eye(spec.dim)[col.astype(int)]
        return col.copy()

    def row_values(self, i: int) -> list:
        return [
            spec.levels[int(c)] if spec.is_categorical else c
            for spec, c in zip(self.schema, self.codes[i])
        ]

    def with_codes(self, codes: np.ndarray) -> "Dataset":
        return Dataset(self.schema, codes)

    def to_csv(self, delimiter: str = ",") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(self.schema.names)
        for i in range(self.n):
            writer.writerow([_format_cell(v, spec) for v, spec in zip(self.row_values(i), self.schema)])
        return buf.getvalue()


def _format_cell(value, spec: VariableSpec) -> str:
    if spec.is_categorical:
        return value
    if spec.kind == COUNT:
        return str(int(value))
    return repr(float(value))


def encode_codes(codes: np.ndarray, schema: Schema) -> np.ndarray:
    codes = np.asarray(codes, dtype=float)
    n = codes.shape[0]
    D = schema.max_dim
    b = np.zeros((n, schema.p, D))
    rows = np.arange(n)
    for j, spec in enumerate(schema):
        if spec.is_categorical:
            b[rows, j, codes[:, j].astype(int)] = 1.0
        else:
            b[:, j, 0] = codes[:, j]
    return b


def dataset_from_rows(rows: Iterable[Sequence], schema: Schema) -> Dataset:
    """Build a dataset from rows of raw cell values in schema order."""
    codes = []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != schema.p:
            raise DataError(f"row {lineno}: expected {schema.p} cells, got {len(row)}")
        out = []
        for cell, spec in zip(row, schema):
            encoded = encode_value(cell, spec)
            out.append(float(np.argmax(encoded)) if spec.is_categorical else encoded)
        codes.append(out)
    arr = np.array(codes, dtype=float).reshape(len(codes), schema.p)
    return Dataset(schema, arr)


def load_dataset(table: str, schema: Schema, delimiter: str | None = None) -> Dataset:
    """Load a delimited table with a header row of variable names.

    The delimiter is sniffed (comma or tab) unless given. Columns are matched
    to the schema by name, so column order in the file does not matter.
    """
    lines = table.splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        return Dataset(schema, np.zeros((0, schema.p)))
    if delimiter is None:
        delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    missing = [name for name in schema.names if name not in header]
    if missing:
        raise DataError(f"table lacks columns for variables {missing}")
    order = [header.index(name) for name in schema.names]
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if len(raw) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} cells, got {len(raw)}")
        rows.append([raw[c] for c in order])
    return dataset_from_rows(rows, schema)
