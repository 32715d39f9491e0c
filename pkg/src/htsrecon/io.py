"""Panel CSV ingestion and JSON helpers."""
from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from htsrecon.hierarchy import Hierarchy, Panel, build_summing_matrix

_MONTH = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


class PanelFormatError(ValueError):
    pass


def ingest_panel_csv(path: str | Path, hierarchy: Hierarchy) -> Panel:
    """Read ``series_id,date,value`` rows into a panel in hierarchy order.

    Every series must be observed on consecutive months from its first
    observation to the last month of the file. Upper-level series missing
    from the file are rebuilt as sums of their leaves.
    """
    known = set(hierarchy.nodes)
    data: dict[str, dict[np.datetime64, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["series_id", "date", "value"]:
            raise PanelFormatError(f"{path}: header must be 'series_id,date,value', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise PanelFormatError(f"line {lineno}: expected 3 fields, got {len(row)}")
            sid, date, raw = (c.strip() for c in row)
            if sid not in known:
                raise PanelFormatError(f"line {lineno}: unknown series_id {sid!r}")
            if not _MONTH.match(date):
                raise PanelFormatError(f"line {lineno}: date {date!r} is not YYYY-MM")
            try:
                value = float(raw)
            except ValueError:
                raise PanelFormatError(
                    f"line {lineno}: non-numeric value {raw!r} for {sid} {date}") from None
            if not math.isfinite(value):
                raise PanelFormatError(f"line {lineno}: non-finite value for {sid} {date}")
            month = np.datetime64(date, "M")
            series = data.setdefault(sid, {})
            if month in series:
                raise PanelFormatError(f"line {lineno}: duplicate entry for {sid} {date}")
            series[month] = value
    if not data:
        raise PanelFormatError(f"{path}: no data rows")
    first = min(min(s) for s in data.values())
    last = max(max(s) for s in data.values())
    calendar = np.arange(first, last + 1)
    n = len(calendar)
    values = np.full((hierarchy.m, n), np.nan)
    for sid, series in data.items():
        i = hierarchy.index(sid)
        months = sorted(series)
        start = int((months[0] - first).astype(int))
        expected = calendar[start:]
        if len(months) != len(expected):
            have = set(months)
            gap = next(m for m in expected if m not in have)
            raise PanelFormatError(f"series {sid}: missing month {gap} (internal gap)")
        values[i, start:] = [series[m] for m in months]
    missing = [node for node in hierarchy.nodes if node not in data]
    if missing:
        absent_leaves = [node for node in missing if node in set(hierarchy.bottom_ids)]
        if absent_leaves:
            raise PanelFormatError(f"series {absent_leaves[0]} has no rows in {path}")
        smat = np.asarray(build_summing_matrix(hierarchy))
        bottom = values[-hierarchy.m_bottom:]
        present = ~np.isnan(bottom)
        agg = smat @ np.where(present, bottom, 0.0)
        agg[(smat @ present.astype(float)) == 0] = np.nan
        for node in missing:
            i = hierarchy.index(node)
            values[i] = agg[i]
    return Panel(values, calendar, hierarchy.nodes)


def jsonable(obj):
    """Recursively convert numpy containers and non-finite floats (-> None)."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.datetime64):
        return str(obj)
    return obj


def dump_json(obj, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(jsonable(obj), fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def load_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def as_array(values) -> np.ndarray:
    """Inverse of ``jsonable`` for numeric lists (None -> NaN)."""
    return np.array([[np.nan if v is None else v for v in row] if isinstance(row, list)
                     else (np.nan if row is None else row) for row in values], dtype=float)
