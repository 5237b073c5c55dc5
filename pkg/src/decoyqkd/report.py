"""CSV / JSON report writers."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import astuple
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from decoyqkd.experiment import ResultRow

CSV_COLUMNS = (
    "distance_km",
    "eta",
    "Q_mu",
    "E_mu",
    "Q_nu",
    "E_nu",
    "Y0_hat",
    "Y0_lo",
    "Y0_hi",
    "Y1_lower",
    "Q1_lower",
    "e1_upper",
    "R_decoy",
    "R_baseline",
    "verdict",
    "clamps",
)
CSV_HEADER = ",".join(CSV_COLUMNS)


class ReportWriteError(OSError):
    """A report file could not be written."""


def format_float(x: float) -> str:
    return f"{x:.9g}"


def _round9(x: float) -> Optional[float]:
    if math.isnan(x):
        return None
    return float(format_float(x))


def _csv_cells(row: ResultRow) -> list[str]:
    cells = []
    for value in astuple(row):
        if isinstance(value, tuple):
            cells.append(";".join(value))
        elif isinstance(value, float):
            cells.append(format_float(value))
        else:
            cells.append(str(value))
    return cells


def row_to_dict(row: ResultRow) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name, value in zip(CSV_COLUMNS, astuple(row)):
        if isinstance(value, tuple):
            out[name] = list(value)
        elif isinstance(value, float):
            out[name] = _round9(value)
        else:
            out[name] = value
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportWriteError(f"cannot write report {path}: {exc.strerror or exc}") from exc


def render_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(_csv_cells(row))
    return buf.getvalue()


def render_json(rows: Iterable[ResultRow], spec_values: Optional[Mapping[str, Any]] = None) -> str:
    doc = {"spec": dict(spec_values or {}), "rows": [row_to_dict(r) for r in rows]}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def emit_report(
    rows: Sequence[ResultRow],
    directory: str | Path,
    formats: Sequence[str] = ("csv",),
    stem: str = "report",
    spec_values: Optional[Mapping[str, Any]] = None,
) -> list[Path]:
    """Write ``<directory>/<stem>.csv`` and/or ``.json``; return the written paths."""
    if not rows:
        raise ValueError("no result rows to report")
    directory = Path(directory)
    written = []
    for fmt in formats:
        path = directory / f"{stem}.{fmt}"
        if fmt == "csv":
            _write(path, render_csv(rows))
        elif fmt == "json":
            _write(path, render_json(rows, spec_values))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written
