"""Column schemas and CSV ingestion for mixed numeric/categorical tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
TARGET = "target"

_KINDS = (NUMERICAL, CATEGORICAL, TARGET)


class DataError(Exception):
    """Malformed input data or schema."""


@dataclass
class Column:
    name: str
    kind: str
    categories: list | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.categories is not None:
            d["categories"] = list(self.categories)
        return d


@dataclass
class FeatureSchema:
    """Ordered column descriptions; exactly one column has kind 'target'."""

    columns: list
    seed: int | None = None

    def __post_init__(self):
        kinds = [c.kind for c in self.columns]
        for k in kinds:
            if k not in _KINDS:
                raise DataError(f"unknown column kind {k!r}")
        if kinds.count(TARGET) != 1:
            raise DataError(f"schema needs exactly one target column, found {kinds.count(TARGET)}")

    @property
    def target(self) -> Column:
        return next(c for c in self.columns if c.kind == TARGET)

    @property
    def numerical(self) -> list:
        return [c for c in self.columns if c.kind == NUMERICAL]

    @property
    def categorical(self) -> list:
        return [c for c in self.columns if c.kind == CATEGORICAL]

    @property
    def m_n(self) -> int:
        return len(self.numerical)

    @property
    def m_c(self) -> int:
        return len(self.categorical)

    @property
    def m(self) -> int:
        return self.m_n + self.m_c

    @property
    def m_prime(self) -> int:
        widths = [len(c.categories) for c in self.categorical]
        if any(c.categories is None for c in self.categorical):
            raise DataError("m_prime needs fitted category lists")
        return self.m_n + sum(widths)

    @property
    def n_classes(self) -> int:
        cats = self.target.categories
        if cats is None:
            raise DataError("target categories not fitted")
        return len(cats)

    def cat_widths(self) -> list:
        return [len(c.categories) for c in self.categorical]

    def to_dict(self) -> dict:
        d = {"columns": [c.to_dict() for c in self.columns]}
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        cols = [Column(c["name"], c["kind"], c.get("categories")) for c in d["columns"]]
        return cls(cols, seed=d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Table:
    """Typed columns in schema order.

    Numeric columns are float arrays with NaN marking missing cells;
    categorical/target columns are object arrays of strings with None
    marking missing cells.
    """

    schema: FeatureSchema
    columns: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        first = next(iter(self.columns.values()))
        return len(first)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def select_rows(self, idx) -> "Table":
        return Table(self.schema, {k: v[idx] for k, v in self.columns.items()})

    def write_csv(self, path) -> None:
        names = [c.name for c in self.schema.columns]
        kinds = {c.name: c.kind for c in self.schema.columns}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            cols = [self.columns[n] for n in names]
            for i in range(self.n_rows):
                row = []
                for n, col in zip(names, cols):
                    v = col[i]
                    if kinds[n] == NUMERICAL:
                        row.append("" if np.isnan(v) else repr(float(v)))
                    else:
                        row.append("" if v is None else str(v))
                writer.writerow(row)


def _parse_float(cell: str):
    try:
        return float(cell)
    except ValueError:
        return None


def _looks_numeric(values) -> bool:
    seen = False
    for v in values:
        if v == "":
            continue
        if _parse_float(v) is None:
            return False
        seen = True
    return seen


def load_csv(path, schema_path=None) -> Table:
    """Read a header-row CSV, typing columns via the schema sidecar.

    Without a sidecar, kinds are inferred (all-parseable-as-float columns
    become numerical, the rest categorical) and the last column is taken as
    the target.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    width = len(header)
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: ragged row {i + 2} has {len(row)} cells, expected {width}")

    raw = {name: [row[j] for row in body] for j, name in enumerate(header)}

    if schema_path is not None:
        spec = json.loads(Path(schema_path).read_text())
        declared = {c["name"]: c["kind"] for c in spec["columns"]}
        unknown = set(declared) - set(header)
        if unknown:
            raise DataError(f"schema declares unknown columns: {sorted(unknown)}")
        missing = set(header) - set(declared)
        if missing:
            raise DataError(f"schema missing columns: {sorted(missing)}")
        cols = [Column(name, declared[name]) for name in header]
        schema = FeatureSchema(cols, seed=spec.get("seed"))
    else:
        cols = []
        for j, name in enumerate(header):
            if j == width - 1:
                cols.append(Column(name, TARGET))
            elif _looks_numeric(raw[name]):
                cols.append(Column(name, NUMERICAL))
            else:
                cols.append(Column(name, CATEGORICAL))
        schema = FeatureSchema(cols)

    columns = {}
    for col in schema.columns:
        vals = raw[col.name]
        if col.kind == NUMERICAL:
            parsed = np.full(len(vals), np.nan)
            for i, v in enumerate(vals):
                if v != "":
                    f = _parse_float(v)
                    if f is None:
                        raise DataError(
                            f"{path}: non-numeric cell {v!r} in numeric column {col.name!r}")
                    parsed[i] = f
            columns[col.name] = parsed
        else:
            columns[col.name] = np.array([None if v == "" else v for v in vals], dtype=object)
    return Table(schema, columns)
