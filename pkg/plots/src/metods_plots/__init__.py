"""Offline figure rendering for MetODS CSV exports.

This package talks to the core training package only through its documented
CSV files; it never imports it.  Bundled sample tables for every figure kind
live under :func:`golden_dir`.
"""

from importlib import resources
from pathlib import Path

from .figures import FIGURE_KINDS, FigureSpec, render
from .schemas import SCHEMAS, SchemaError, Table, read_table

__all__ = [
    "FIGURE_KINDS",
    "FigureSpec",
    "SCHEMAS",
    "SchemaError",
    "Table",
    "golden_dir",
    "read_table",
    "render",
]


def golden_dir() -> Path:
    """Directory holding one sample CSV per figure kind."""
    return Path(resources.files(__package__) / "golden")
