"""Panel CSV and fit JSON serialisation.

Panel CSVs are long format with one row per (unit, period)::

    unit,time,treated,post,outcome[,covariate columns...]

``treated`` marks the single treated unit's rows, ``post`` marks periods after
treatment starts (identical for every unit). Every extra column is read as a
covariate. Floats are written with ``repr`` so files round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .panel import PanelData

REQUIRED = ("unit", "time", "treated", "post", "outcome")


class PanelFormatError(ValueError):
    """Malformed panel CSV; the message names the offending line and column."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.column = column


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def panel_to_csv(panel: PanelData, path=None) -> str:
    covs = list(panel.covariates)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(REQUIRED) + covs)
    for i, unit in enumerate(panel.unit_ids):
        for t, time in enumerate(panel.times):
            row = [
                unit,
                fmt(time.item() if hasattr(time, "item") else time),
                int(i == panel.treated_unit),
                int(t >= panel.t0),
                fmt(panel.outcome[t, i]),
            ]
            row += [fmt(panel.covariates[c][t, i]) for c in covs]
            w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_number(text: str, line: int, column: str, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise PanelFormatError(f"cannot parse {text!r} as a number", line, column) from None
    if kind is float and not math.isfinite(value):
        raise PanelFormatError(f"non-finite value {text!r}", line, column)
    return value


def _parse_flag(text: str, line: int, column: str) -> bool:
    if text.strip() not in ("0", "1"):
        raise PanelFormatError(f"expected 0 or 1, got {text!r}", line, column)
    return text.strip() == "1"


def read_panel_csv(source) -> PanelData:
    """Parse a long-format panel CSV from a path or a text stream."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_panel_csv(fh)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise PanelFormatError("file is empty", 1) from None
    header = [h.strip() for h in header]
    for col in REQUIRED:
        if col not in header:
            raise PanelFormatError(f"missing required column {col!r}", 1)
    if len(set(header)) != len(header):
        raise PanelFormatError("duplicate column names", 1)
    idx = {h: i for i, h in enumerate(header)}
    covs = [h for h in header if h not in REQUIRED]

    cells: dict[tuple[str, float], list] = {}
    units: list[str] = []
    times: set = set()
    treated: dict[str, bool] = {}
    post: dict[float, bool] = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelFormatError(f"expected {len(header)} fields, found {len(row)}", line)
        unit = row[idx["unit"]].strip()
        if not unit:
            raise PanelFormatError("empty unit id", line, "unit")
        time = _parse_number(row[idx["time"]], line, "time")
        is_treated = _parse_flag(row[idx["treated"]], line, "treated")
        is_post = _parse_flag(row[idx["post"]], line, "post")
        if (unit, time) in cells:
            raise PanelFormatError(f"duplicate row for unit {unit!r} at time {time!r}", line)
        if unit not in treated:
            units.append(unit)
            treated[unit] = is_treated
        elif treated[unit] != is_treated:
            raise PanelFormatError(f"treated flag changes within unit {unit!r}", line, "treated")
        if post.setdefault(time, is_post) != is_post:
            raise PanelFormatError(f"post flag at time {time!r} differs across units", line, "post")
        times.add(time)
        values = [_parse_number(row[idx["outcome"]], line, "outcome")]
        values += [_parse_number(row[idx[c]], line, c) for c in covs]
        cells[(unit, time)] = values

    if not cells:
        raise PanelFormatError("no data rows", 2)
    treated_units = [u for u in units if treated[u]]
    if len(treated_units) != 1:
        raise PanelFormatError(f"need exactly one treated unit, found {len(treated_units)}", column="treated")
    tgrid = sorted(times)
    flags = [post[t] for t in tgrid]
    t0 = flags.index(True) if True in flags else len(flags)
    if t0 == 0 or t0 == len(flags) or not all(flags[t0:]):
        raise PanelFormatError("post must be 0 for an initial run of periods and 1 afterwards", column="post")
    for u in units:
        for t in tgrid:
            if (u, t) not in cells:
                raise PanelFormatError(f"unbalanced panel: unit {u!r} has no row for time {t!r}")
    arr = np.array([[cells[(u, t)] for u in units] for t in tgrid])  # T x N x (1 + q)
    times_out = np.array([int(t) if float(t).is_integer() else t for t in tgrid])
    return PanelData(
        tuple(units),
        times_out,
        arr[:, :, 0],
        t0,
        {c: arr[:, :, j + 1] for j, c in enumerate(covs)},
        units.index(treated_units[0]),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n"
