"""Flow-record ingestion, categorical encoding and the seeded train/val/test split."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fileio import atomic_open, format_float, parse_kv, write_kv

KINDS = ("id", "numeric", "categorical", "category", "label")
# Spellings of an empty attack category in the public partition files.
_NORMAL_CATEGORY = {"", "-", "normal"}


class DatasetError(ValueError):
    """Base class for ingest and split failures."""


class HeaderMismatchError(DatasetError):
    pass


class CellParseError(DatasetError):
    pass


class LabelError(DatasetError):
    pass


class SchemaMismatchError(DatasetError):
    pass


@dataclass(frozen=True)
class ColumnSchema:
    """Ordered CSV column layout; each column has a kind from ``KINDS``."""

    name: str
    version: int
    columns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")
        for col, kind in self.columns:
            if kind not in KINDS:
                raise ValueError(f"column {col!r}: unknown kind {kind!r}")
        kinds = [k for _, k in self.columns]
        if kinds.count("label") != 1:
            raise ValueError("schema needs exactly one label column")
        if kinds.count("category") > 1:
            raise ValueError("schema allows at most one category column")

    @property
    def names(self) -> list[str]:
        return [c for c, _ in self.columns]

    @property
    def value_columns(self) -> list[str]:
        """Columns stored in ``FlowRecord.values`` (everything but label and category)."""
        return [c for c, k in self.columns if k not in ("label", "category")]

    @property
    def feature_columns(self) -> list[str]:
        return [c for c, k in self.columns if k in ("numeric", "categorical")]

    @property
    def categorical_columns(self) -> list[str]:
        return [c for c, k in self.columns if k == "categorical"]

    @property
    def label_column(self) -> str:
        return next(c for c, k in self.columns if k == "label")

    @property
    def category_column(self) -> str | None:
        return next((c for c, k in self.columns if k == "category"), None)

    def kind(self, column: str) -> str:
        for c, k in self.columns:
            if c == column:
                return k
        raise KeyError(column)

    def to_dict(self) -> dict:
        return {"name": self.name, "version": self.version, "columns": [list(c) for c in self.columns]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnSchema":
        return cls(d["name"], int(d["version"]), tuple((str(c), str(k)) for c, k in d["columns"]))


def parse_schema(text: str, source: str = "<schema>") -> ColumnSchema:
    """Parse a manifest: ``key = value`` header lines, then ``<column> <kind>`` lines."""
    meta_lines, columns = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            meta_lines.append(line)
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected '<column> <kind>', got {raw!r}")
        columns.append((parts[0], parts[1]))
    meta = parse_kv("\n".join(meta_lines), source)
    return ColumnSchema(meta.get("schema", "custom"), int(meta.get("version", 1)), tuple(columns))


def load_schema(path: str | os.PathLike | None = None) -> ColumnSchema:
    """Load a column manifest; ``None`` gives the bundled UNSW-NB15 partition layout."""
    if path is None:
        text = resources.files("nidt").joinpath("schemas/unsw_nb15_partition_v1.txt").read_text("utf-8")
        return parse_schema(text, "unsw_nb15_partition_v1.txt")
    return parse_schema(Path(path).read_text(encoding="utf-8"), str(path))


UNSW_NB15 = load_schema()


@dataclass(frozen=True, slots=True)
class FlowRecord:
    """One flow row. ``values`` follows ``schema.value_columns``: floats for numeric
    columns, raw strings for id and categorical columns."""

    values: tuple
    label: int
    attack_cat: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise LabelError(f"label must be 0 or 1, got {self.label!r}")
        if bool(self.attack_cat) != (self.label == 1):
            raise LabelError(
                f"attack category {self.attack_cat!r} inconsistent with label {self.label}"
            )


def _normalize_category(raw: str) -> str:
    s = raw.strip()
    return "" if s.lower() in _NORMAL_CATEGORY else s


def _parse_label(raw: str, row: int) -> int:
    s = raw.strip()
    if s not in ("0", "1"):
        raise LabelError(f"row {row}: label {raw!r} is not 0 or 1")
    return int(s)


def _make_record(cells: Sequence[str], schema: ColumnSchema, row: int) -> FlowRecord:
    values = []
    label = 0
    cat = ""
    for (col, kind), cell in zip(schema.columns, cells):
        if kind == "numeric":
            try:
                values.append(float(cell))
            except ValueError:
                raise CellParseError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
        elif kind == "label":
            label = _parse_label(cell, row)
        elif kind == "category":
            cat = _normalize_category(cell)
        else:
            values.append(cell)
    try:
        return FlowRecord(tuple(values), label, cat)
    except LabelError as exc:
        raise LabelError(f"row {row}: {exc}") from None


def load_csv(path: str | os.PathLike, schema: ColumnSchema = UNSW_NB15) -> list[FlowRecord]:
    """Read a header-first CSV into flow records, in file order.

    Rows are numbered from 1 (the first data row). A normal row may carry the
    category spelled ``Normal``, ``-`` or empty; all three load as ``""``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise HeaderMismatchError(f"{path}: empty file, expected a header row")
        expected = schema.names
        for i, want in enumerate(expected):
            got = header[i].strip() if i < len(header) else None
            if got != want:
                raise HeaderMismatchError(
                    f"{path}: header column {i} is {got!r}, expected {want!r}"
                )
        if len(header) > len(expected):
            raise HeaderMismatchError(f"{path}: unexpected extra header column {header[len(expected)]!r}")
        records = []
        for row, cells in enumerate(reader, 1):
            if not cells:
                continue
            if len(cells) != len(expected):
                raise CellParseError(f"row {row}: {len(cells)} cells, expected {len(expected)}")
            records.append(_make_record(cells, schema, row))
    return records


def load_csvs(paths: Iterable[str | os.PathLike], schema: ColumnSchema = UNSW_NB15) -> list[FlowRecord]:
    records: list[FlowRecord] = []
    for p in paths:
        records.extend(load_csv(p, schema))
    return records


def write_csv(records: Iterable[FlowRecord], path: str | os.PathLike, schema: ColumnSchema = UNSW_NB15) -> None:
    """Write records with the schema header; numbers are written at full precision."""
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.names)
        for rec in records:
            it = iter(rec.values)
            row = []
            for _, kind in schema.columns:
                if kind == "label":
                    row.append(str(rec.label))
                elif kind == "category":
                    row.append(rec.attack_cat)
                elif kind == "numeric":
                    row.append(format_float(next(it)))
                else:
                    row.append(next(it))
            writer.writerow(row)


def records_from_rows(rows: Iterable[Mapping[str, object]], schema: ColumnSchema = UNSW_NB15) -> list[FlowRecord]:
    """Build records from dict-like rows keyed by column name (e.g. a parsed JSON feed)."""
    out = []
    for row_no, row in enumerate(rows, 1):
        cells = []
        for col in schema.names:
            if col not in row:
                if schema.kind(col) in ("id", "category"):
                    cells.append("")
                    continue
                raise SchemaMismatchError(f"row {row_no}: missing column {col!r}")
            cells.append(str(row[col]))
        out.append(_make_record(cells, schema, row_no))
    return out


@dataclass(frozen=True)
class EncodingMap:
    """Lexicographic integer codes per categorical column.

    A value never seen while fitting maps to the reserved code ``len(codes)``.
    """

    codes: Mapping[str, Mapping[str, int]]

    def code(self, column: str, value: str) -> int:
        table = self.codes[column]
        return table.get(value, len(table))

    def size(self, column: str) -> int:
        return len(self.codes[column])

    def to_dict(self) -> dict:
        return {col: dict(table) for col, table in self.codes.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Mapping[str, int]]) -> "EncodingMap":
        return cls({col: {str(v): int(c) for v, c in table.items()} for col, table in d.items()})

    def save(self, path: str | os.PathLike) -> None:
        # column.value = code; values may contain any character except newline
        items = {f"{col}.{value}": code for col, table in self.codes.items() for value, code in table.items()}
        write_kv(path, items, comment="categorical encoding: <column>.<value> = <code>")


def fit_encoding(
    records: Sequence[FlowRecord],
    categorical_columns: Sequence[str] | None = None,
    schema: ColumnSchema = UNSW_NB15,
) -> EncodingMap:
    if categorical_columns is None:
        categorical_columns = schema.categorical_columns
    value_cols = schema.value_columns
    codes = {}
    for col in categorical_columns:
        if col not in value_cols:
            raise SchemaMismatchError(f"column {col!r} is not in schema {schema.name!r}")
        pos = value_cols.index(col)
        distinct = sorted({rec.values[pos] for rec in records})
        codes[col] = {v: i for i, v in enumerate(distinct)}
    return EncodingMap(codes)


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense float64 design matrix with named columns."""

    values: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError(f"matrix shape {self.values.shape} does not match {len(self.columns)} column names")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


def to_matrix(
    records: Sequence[FlowRecord], encoding: EncodingMap, schema: ColumnSchema = UNSW_NB15
) -> tuple[FeatureMatrix, np.ndarray]:
    """Numeric matrix over ``schema.feature_columns`` plus the 0/1 label vector."""
    value_cols = schema.value_columns
    missing = [c for c in schema.categorical_columns if c not in encoding.codes]
    if missing:
        raise SchemaMismatchError(f"encoding has no codes for column {missing[0]!r}")
    feats = schema.feature_columns
    positions = [value_cols.index(c) for c in feats]
    converters = []
    for c in feats:
        if schema.kind(c) == "categorical":
            table = encoding.codes[c]
            converters.append(lambda v, t=table: float(t.get(v, len(t))))
        else:
            converters.append(float)
    X = np.empty((len(records), len(feats)), dtype=np.float64)
    for i, rec in enumerate(records):
        vals = rec.values
        if len(vals) != len(value_cols):
            raise SchemaMismatchError(
                f"record {i} has {len(vals)} values, schema {schema.name!r} expects {len(value_cols)}"
            )
        X[i] = [conv(vals[p]) for conv, p in zip(converters, positions)]
    y = np.fromiter((rec.label for rec in records), dtype=np.int64, count=len(records))
    return FeatureMatrix(X, tuple(feats)), y


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 42
    stratify: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError(f"split ratios must be three positive fractions, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(self.ratios)!r}")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Train gets ``floor(n*r_train)``, test ``round(n*r_test)`` (halves up), val the rest.

    For n = 257,673 at (0.6, 0.2, 0.2) this gives 154,603 / 51,535 / 51,535.
    """
    r_train, _, r_test = ratios
    n_train = math.floor(n * r_train)
    n_test = min(math.floor(n * r_test + 0.5), n - n_train)
    return n_train, n - n_train - n_test, n_test


def _apportion(count: int, totals: Sequence[int]) -> list[int]:
    # largest-remainder share of ``count`` proportional to ``totals``; each share is floor or ceil
    n = sum(totals)
    quotas = [count * t / n for t in totals]
    shares = [math.floor(q) for q in quotas]
    order = sorted(range(len(totals)), key=lambda i: (-(quotas[i] - shares[i]), i))
    for i in order[: count - sum(shares)]:
        shares[i] += 1
    return shares


def split_indices(labels: Sequence[int] | np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays for (train, val, test).

    One seeded Fisher-Yates permutation orders the rows; with stratification each
    class is dealt out in permutation order so every split holds its class share
    to within one record.
    """
    y = np.asarray(labels)
    n = y.shape[0]
    if spec.stratify and n < 3:
        raise DatasetError(f"cannot stratify {n} records into three non-empty splits")
    sizes = split_sizes(n, spec.ratios)
    perm = np.random.default_rng(spec.seed).permutation(n)
    if not spec.stratify:
        a, b = sizes[0], sizes[0] + sizes[1]
        return perm[:a], perm[a:b], perm[b:]
    rank = np.empty(n, dtype=np.int64)
    rank[perm] = np.arange(n)
    parts: list[list[np.ndarray]] = [[], [], []]
    remaining = list(sizes)
    classes = np.unique(y)
    for ci, cls in enumerate(classes):
        members = perm[y[perm] == cls]
        if ci == len(classes) - 1:
            shares = remaining
        else:
            shares = _apportion(members.size, sizes)
            remaining = [r - s for r, s in zip(remaining, shares)]
        start = 0
        for s in range(3):
            parts[s].append(members[start : start + shares[s]])
            start += shares[s]
    out = []
    for s in range(3):
        idx = np.concatenate(parts[s]) if parts[s] else np.empty(0, dtype=np.int64)
        out.append(idx[np.argsort(rank[idx], kind="stable")])
    return out[0], out[1], out[2]


def split(
    records: Sequence[FlowRecord], spec: SplitSpec = SplitSpec()
) -> tuple[list[FlowRecord], list[FlowRecord], list[FlowRecord]]:
    idx = split_indices([r.label for r in records], spec)
    return tuple([records[i] for i in part] for part in idx)  # type: ignore[return-value]


def write_provenance(path: str | os.PathLike, spec: SplitSpec, counts: Mapping[str, int], sources: Sequence[str] = ()) -> None:
    items: dict[str, object] = {
        "seed": spec.seed,
        "ratio_train": repr(spec.ratios[0]),
        "ratio_val": repr(spec.ratios[1]),
        "ratio_test": repr(spec.ratios[2]),
        "stratify": spec.stratify,
    }
    items.update({f"count_{k}": v for k, v in counts.items()})
    for i, src in enumerate(sources):
        items[f"source_{i}"] = src
    write_kv(path, items, comment="split provenance")
