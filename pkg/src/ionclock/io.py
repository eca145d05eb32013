"""CSV persistence and run manifests.

Floats are written in scientific notation with 9 significant digits and a
'.' decimal separator regardless of locale.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Iterable

import numpy as np

from .freqstats import FreqSeries, Measurement


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.8e" % float(v)
    return str(v)


def csv_text(rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(rows, path=None):
    """Write rows to ``path`` (or stdout when None or '-')."""
    text = csv_text(rows)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _read_table(path, required):
    """Yield ``(line_number, {column: float})`` for each data row."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}:1: missing column(s) {', '.join(missing)}")
    idx = {c: header.index(c) for c in required}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        out = {}
        for c, i in idx.items():
            try:
                out[c] = float(row[i])
            except ValueError:
                raise DataError(f"{path}:{line}: column {c!r} is not a number: {row[i]!r}") from None
            if not math.isfinite(out[c]):
                raise DataError(f"{path}:{line}: column {c!r} is not finite")
        yield line, out


def read_series_csv(path, time_col="t_seconds", value_col="offset_fractional") -> FreqSeries:
    """Load a frequency record and infer its cadence.

    Missing samples (time steps that are integer multiples of the cadence)
    become gaps in the returned series.
    """
    rows = list(_read_table(path, (time_col, value_col)))
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two samples")
    t = np.array([r[time_col] for _, r in rows])
    y = np.array([r[value_col] for _, r in rows])
    steps = np.diff(t)
    for k, st in enumerate(steps):
        if st <= 0:
            raise DataError(f"{path}:{rows[k + 1][0]}: time does not increase")
    # the tolerance absorbs 9-significant-digit rounding of long time stamps
    mult = steps / float(np.min(steps))
    k_int = np.rint(mult)
    bad = np.nonzero(np.abs(mult - k_int) > 1e-3)[0]
    if bad.size:
        raise DataError(f"{path}:{rows[bad[0] + 1][0]}: irregular time step, cadence not inferable")
    dt = float((t[-1] - t[0]) / k_int.sum())
    if np.all(k_int == 1):
        return FreqSeries(y, dt, float(t[0]))
    pos = np.concatenate([[0], np.cumsum(k_int).astype(int)])
    full = np.zeros(pos[-1] + 1)
    gaps = np.ones(pos[-1] + 1, bool)
    full[pos] = y
    gaps[pos] = False
    return FreqSeries(full, dt, float(t[0]), gaps)


def read_repump_csv(path):
    rows = list(_read_table(path, ("t_seconds", "counts")))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return (np.array([r["t_seconds"] for _, r in rows]),
            np.array([r["counts"] for _, r in rows]))


def read_measurements_csv(path):
    out = []
    for line, r in _read_table(path, ("mean", "sigma", "duration_s")):
        try:
            out.append(Measurement(r["mean"], r["sigma"], r["duration_s"]))
        except ValueError as exc:
            raise DataError(f"{path}:{line}: {exc}") from None
    return out


def write_manifest(path, manifest: dict):
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n",
                          encoding="utf-8")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (tuple, set)):
        return list(v)
    raise TypeError(f"not serializable: {type(v).__name__}")
