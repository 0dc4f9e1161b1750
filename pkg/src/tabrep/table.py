"""In-memory tabular data model: CSV ingestion, dtype inference, column surgery.

A cell is either a string or ``None`` (missing). Missing cells are rendered
as the ``[MASK]`` token only at tokenization time, so raw tables round-trip
through CSV unchanged (an empty CSV field means missing).
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence


class DataType(IntEnum):
    """Declared column data type; integer codes are part of the model input."""

    NUMERICAL = 0
    CATEGORICAL = 1
    TEXTUAL = 2


@dataclass(frozen=True)
class Column:
    name: str
    dtype: DataType

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("column name must be non-empty")


Cell = "str | None"  # None == missing


class TableError(ValueError):
    pass


class IoError(TableError):
    pass


class RaggedRowError(TableError):
    def __init__(self, row_index: int):
        super().__init__(f"row {row_index} has wrong number of fields")
        self.row_index = row_index


class EmptyTableError(TableError):
    pass


class AllMissingError(TableError):
    pass


class InvalidPermutationError(TableError):
    pass


class UnknownColumnError(TableError):
    pass


class WouldBeEmptyError(TableError):
    pass


@dataclass(frozen=True)
class Table:
    """Immutable table: a schema plus rows of optional-string cells."""

    schema: tuple[Column, ...]
    rows: tuple[tuple[str | None, ...], ...]

    def __post_init__(self):
        if len(self.schema) < 1:
            raise EmptyTableError("table needs at least one column")
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise TableError("duplicate column names")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.schema):
                raise RaggedRowError(i)

    @property
    def n_columns(self) -> int:
        return len(self.schema)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column_names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.schema):
            if c.name == name:
                return i
        raise UnknownColumnError(f"no column named {name!r}")

    def column_values(self, name: str) -> list[str | None]:
        j = self.column_index(name)
        return [row[j] for row in self.rows]


# Strict decimal grammar: no underscores, no thousands separators, no inf/nan.
_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def is_number(value: str) -> bool:
    return bool(_NUMBER_RE.match(value.strip()))


def parse_number(value: str) -> float:
    if not is_number(value):
        raise ValueError(f"not a plain decimal number: {value!r}")
    return float(value.strip())


def infer_dtype(values: Iterable[str | None]) -> DataType:
    """Infer a column dtype from its raw values.

    Numerical when every non-missing value is a plain finite decimal;
    otherwise categorical when the distinct count stays at or below
    max(20, 5% of the non-missing count); otherwise textual.
    """
    present = [v for v in values if v is not None]
    if not present:
        raise AllMissingError("cannot infer dtype: all values missing")
    if all(is_number(v) for v in present):
        return DataType.NUMERICAL
    distinct = len(set(present))
    if distinct <= max(20, 0.05 * len(present)):
        return DataType.CATEGORICAL
    return DataType.TEXTUAL


def _normalize_cell(field: str) -> str | None:
    return None if field == "" else field


def load_csv(path: str | Path, header: bool = True) -> Table:
    """Load an RFC-4180 CSV file (UTF-8, LF or CRLF) into a Table.

    Empty fields become missing cells; column dtypes are inferred. Without a
    header row, columns are named ``col0..colN-1``. Fully-missing columns get
    dtype TEXTUAL.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return loads_csv(text, header=header)


def loads_csv(text: str, header: bool = True) -> Table:
    """Parse CSV text; see load_csv."""
    records = list(csv.reader(io.StringIO(text, newline="")))
    if not records:
        raise EmptyTableError("CSV input contains no records")
    if header:
        names = [n.strip() for n in records[0]]
        data = records[1:]
    else:
        names = [f"col{i}" for i in range(len(records[0]))]
        data = records
    n = len(names)
    if n == 0:
        raise EmptyTableError("CSV input has an empty header")
    rows = []
    for i, rec in enumerate(data, start=1 if header else 0):
        if len(rec) != n:
            raise RaggedRowError(i)
        rows.append(tuple(_normalize_cell(f) for f in rec))
    schema = []
    for j, name in enumerate(names):
        col_values = [row[j] for row in rows]
        try:
            dtype = infer_dtype(col_values)
        except AllMissingError:
            dtype = DataType.TEXTUAL
        schema.append(Column(name, dtype))
    return Table(tuple(schema), tuple(rows))


def dumps_csv(table: Table) -> str:
    """Render a Table as CSV text with LF line endings; missing -> empty field."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([c.name for c in table.schema])
    for row in table.rows:
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def write_csv(table: Table, path: str | Path) -> None:
    """Write a Table as UTF-8 CSV with LF line endings; missing -> empty field."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_csv(table))


def table_from_rows(
    names: Sequence[str],
    rows: Sequence[Sequence[str | None]],
    dtypes: Sequence[DataType] | None = None,
) -> Table:
    """Build a Table from python data, inferring dtypes unless given."""
    norm_rows = tuple(
        tuple(None if v in (None, "") else str(v) for v in row) for row in rows
    )
    if dtypes is None:
        schema = []
        for j, name in enumerate(names):
            try:
                dtype = infer_dtype(r[j] for r in norm_rows)
            except AllMissingError:
                dtype = DataType.TEXTUAL
            schema.append(Column(name, dtype))
    else:
        schema = [Column(n, d) for n, d in zip(names, dtypes)]
    return Table(tuple(schema), norm_rows)


def permute_columns(table: Table, perm: Sequence[int]) -> Table:
    """Reorder columns so result column i is original column perm[i]."""
    n = table.n_columns
    if sorted(perm) != list(range(n)):
        raise InvalidPermutationError(f"{list(perm)} is not a permutation of 0..{n - 1}")
    schema = tuple(table.schema[p] for p in perm)
    rows = tuple(tuple(row[p] for p in perm) for row in table.rows)
    return Table(schema, rows)


def drop_columns(table: Table, names: set[str] | Iterable[str]) -> Table:
    """Remove the named columns; row count is preserved."""
    names = set(names)
    known = {c.name for c in table.schema}
    unknown = names - known
    if unknown:
        raise UnknownColumnError(f"unknown columns: {sorted(unknown)}")
    keep = [j for j, c in enumerate(table.schema) if c.name not in names]
    if not keep:
        raise WouldBeEmptyError("dropping all columns would leave an empty table")
    schema = tuple(table.schema[j] for j in keep)
    rows = tuple(tuple(row[j] for j in keep) for row in table.rows)
    return Table(schema, rows)
