"""CSV / JSON export of rectangular result tables."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from ..errors import DataError, IoFailure, RaggedRows

__all__ = ["export_table", "read_csv_table"]


def _plain(v):
    if isinstance(v, np.generic):
        v = v.item()
    return v


def _cell(v) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)  # shortest round-trip representation
    return str(v)


def _json_value(v):
    v = _plain(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def export_table(rows, columns, path, fmt: str = "csv") -> Path:
    """Write ``rows`` under ``columns`` as CSV (header, LF endings) or a JSON array of objects."""
    columns = [str(c) for c in columns]
    rows = [list(r) for r in rows]
    for i, r in enumerate(rows):
        if len(r) != len(columns):
            raise RaggedRows(f"row {i} has {len(r)} cells, expected {len(columns)}")
    fmt = fmt.lower()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_cell(v) for v in r])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(
            [{c: _json_value(v) for c, v in zip(columns, r)} for r in rows], indent=1
        ) + "\n"
    else:
        raise DataError(f"unknown table format {fmt!r} (csv or json)")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and string cells of a CSV written by :func:`export_table`."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
    if not reader:
        raise DataError(f"{path} is empty")
    return reader[0], reader[1:]
