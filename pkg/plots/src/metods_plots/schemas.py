"""Strict readers for the exported CSV tables.

Each figure kind consumes one or two of the tables documented in the core
package's ``docs/formats.md``.  Validation happens before any drawing: the
header must match the schema exactly (order included), every cell must
parse, and a table without data rows is an error — we never emit a blank
image.  All failures name the offending file and column.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable


class SchemaError(ValueError):
    """A CSV file that does not match its documented schema."""


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    return float(text)


def _text(text: str) -> str:
    return text


def _blank_or_float(text: str) -> float:
    """Empty cells mean "no data" (for example an unvisited maze cell)."""
    return math.nan if text == "" else float(text)


@dataclass(frozen=True)
class TableSchema:
    """Fixed leading columns, plus an optional numbered trailing block
    (``pc1, pc2, ...``) of at least ``variable_min`` float columns."""

    name: str
    columns: tuple[tuple[str, Callable], ...]
    variable_prefix: str = ""
    variable_min: int = 0

    def fixed_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def match_header(self, path: Path, header: list[str]) -> list[tuple[str, Callable]]:
        """Return the full (name, parser) list for this file, or raise."""
        fixed = self.fixed_names()
        got_fixed = header[: len(fixed)]
        missing = [n for n in fixed if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        if got_fixed != fixed:
            raise SchemaError(
                f"{path}: columns must start with {', '.join(fixed)}; "
                f"got {', '.join(header)}")
        extra = header[len(fixed):]
        if not self.variable_prefix:
            if extra:
                raise SchemaError(
                    f"{path}: unexpected column(s) {', '.join(extra)}")
            return list(self.columns)
        want = [f"{self.variable_prefix}{i}" for i in range(1, len(extra) + 1)]
        if extra != want or len(extra) < self.variable_min:
            need = ", ".join(f"{self.variable_prefix}{i}"
                             for i in range(1, self.variable_min + 1))
            raise SchemaError(
                f"{path}: expected numbered column(s) {need}, ... after "
                f"{fixed[-1]}; got {', '.join(extra) or 'none'}")
        return list(self.columns) + [(n, _float) for n in extra]


SCHEMAS: dict[str, TableSchema] = {
    "metrics": TableSchema("metrics", (
        ("step", _int), ("update", _int), ("mean_reward", _float),
        ("success_rate", _float), ("first_reward_step", _float),
        ("policy_loss", _float), ("value_loss", _float), ("entropy", _float),
        ("grad_norm", _float), ("wall_time", _float))),
    "eval": TableSchema("eval", (
        ("update", _int), ("step", _int), ("episodes", _int),
        ("mean_reward", _float), ("std_reward", _float),
        ("success_rate", _float), ("mean_first_reward", _float))),
    "pca": TableSchema("pca", (
        ("episode", _int), ("step", _int), ("label", _text)),
        variable_prefix="pc", variable_min=2),
    "pca_variance": TableSchema("pca_variance", (
        ("component", _int), ("eigenvalue", _float), ("ratio", _float))),
    "energy_grid": TableSchema("energy_grid", (
        ("episode", _int), ("a", _float), ("b", _float), ("energy", _float))),
    "selectivity": TableSchema("selectivity", (
        ("row", _int), ("col", _int), ("visits", _int),
        ("mean_activation", _blank_or_float))),
    "ablation": TableSchema("ablation", (
        ("variant", _text), ("seed", _int), ("mean_reward", _float),
        ("std_reward", _float), ("success_rate", _float),
        ("run_dir", _text))),
}


@dataclass
class Table:
    """A validated table: per-column value lists, in file order."""

    path: Path
    schema: TableSchema
    columns: dict[str, list] = field(default_factory=dict)

    def __len__(self) -> int:
        first = next(iter(self.columns.values()))
        return len(first)

    def __getitem__(self, name: str) -> list:
        return self.columns[name]

    @property
    def variable_names(self) -> list[str]:
        fixed = set(self.schema.fixed_names())
        return [n for n in self.columns if n not in fixed]


def read_table(path: Path | str, schema_name: str) -> Table:
    schema = SCHEMAS[schema_name]
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file (no header)")
    parsers = schema.match_header(path, rows[0])
    if len(rows) == 1:
        raise SchemaError(f"{path}: no data rows")
    table = Table(path, schema, {name: [] for name, _ in parsers})
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(parsers):
            raise SchemaError(f"{path}: row {i}: expected {len(parsers)} "
                              f"cells, got {len(row)}")
        for (name, parse), cell in zip(parsers, row):
            try:
                table.columns[name].append(parse(cell))
            except ValueError:
                raise SchemaError(
                    f"{path}: row {i}: bad {name} value {cell!r}") from None
    return table
