"""CSV ingestion and atomic, canonical result files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import DataError, SurvivalDataset
from .sampler import PosteriorDraws

MISSING = {"", "na", "nan", "null", "none", "."}


def _split(cols) -> list:
    if cols is None:
        return []
    if isinstance(cols, str):
        return [c.strip() for c in cols.split(",") if c.strip()]
    return list(cols)


def _parse_float(cell: str, line: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"line {line}: column {col!r} has non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: column {col!r} is not finite")
    return v


def _expand(name: str, cells: list, categorical: bool, lines: list):
    """Covariate columns for one mapped column: itself, or treatment-coded dummies."""
    if not categorical:
        return [name], [np.array([_parse_float(c, ln, name) for c, ln in zip(cells, lines)])]
    levels = sorted(set(cells))
    # first level alphabetically is the reference
    names = [f"{name}[{lv}]" for lv in levels[1:]]
    arrays = [np.array([1.0 if c == lv else 0.0 for c in cells]) for lv in levels[1:]]
    return names, arrays


def ingest_csv(path, time_col: str = "time", status_col: str = "status",
               x_cols=None, z_cols=None, categorical=None, min_time: Optional[float] = None,
               time_divisor: Optional[float] = None, drop_missing: bool = False,
               event_value: str = "1", extra_cols=None):
    """Read a header CSV into a SurvivalDataset.

    ``z_cols`` defaults to ``x_cols``; an intercept is always prepended to z.
    Columns named in ``categorical`` become dummy variables. Rows whose time
    is below ``min_time`` are dropped (before unit conversion); times are
    divided by ``time_divisor`` when given (365.25 turns days into years).
    Line numbers in errors count the header as line 1. With ``extra_cols``
    the return value is ``(dataset, {column: raw string values})`` for the
    same retained rows.
    """
    x_cols, z_cols = _split(x_cols), _split(z_cols)
    if not z_cols and x_cols:
        z_cols = list(x_cols)
    categorical = set(_split(categorical))
    extra = _split(extra_cols)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("CSV file has no header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        mapped = [time_col, status_col] + list(dict.fromkeys(x_cols + z_cols + extra))
        absent = [c for c in mapped if c not in header]
        if absent:
            raise DataError(f"columns not found in header: {absent}")
        unknown_cat = categorical - set(x_cols + z_cols)
        if unknown_cat:
            raise DataError(f"categorical columns are not mapped covariates: {sorted(unknown_cat)}")
        rows, lines, missing = [], [], []
        for line, rec in enumerate(reader, start=2):
            vals = {c: (rec.get(c) or "").strip() for c in mapped}
            if any(v.lower() in MISSING for v in vals.values()):
                missing.append(line)
                continue
            rows.append(vals)
            lines.append(line)
    if missing and not drop_missing:
        shown = ", ".join(map(str, missing[:20])) + (" ..." if len(missing) > 20 else "")
        raise DataError(f"missing values in mapped columns on lines {shown}")
    if not rows:
        raise DataError("no usable rows")

    times = np.array([_parse_float(r[time_col], ln, time_col) for r, ln in zip(rows, lines)])
    status = []
    for r, ln in zip(rows, lines):
        s = r[status_col]
        if s in ("0", "1", "0.0", "1.0"):
            status.append(int(float(s)))
        elif s == event_value:
            status.append(1)
        else:
            raise DataError(f"line {ln}: status must be 0 or 1, got {s!r}")
    status = np.array(status)
    keep = np.ones(len(rows), dtype=bool)
    if min_time is not None:
        keep &= times >= min_time
    bad = np.flatnonzero(keep & (times <= 0))
    if bad.size:
        raise DataError(f"line {lines[bad[0]]}: time must be positive, got {times[bad[0]]}")
    rows = [r for r, k in zip(rows, keep) if k]
    lines = [ln for ln, k in zip(lines, keep) if k]
    times, status = times[keep], status[keep]
    if time_divisor:
        times = times / float(time_divisor)

    def design(cols):
        names, arrays = [], []
        for c in cols:
            nm, arr = _expand(c, [r[c] for r in rows], c in categorical, lines)
            names += nm
            arrays += arr
        mat = np.column_stack(arrays) if arrays else np.zeros((len(rows), 0))
        return names, mat

    x_names, x = design(x_cols)
    zn, zc = design(z_cols)
    z = np.column_stack([np.ones(len(rows)), zc])
    ds = SurvivalDataset(times, status, x, z, x_names, ["intercept"] + zn)
    if extra_cols is None:
        return ds
    return ds, {c: np.array([r[c] for r in rows]) for c in extra}


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def write_atomic(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def draws_table(draws: PosteriorDraws) -> str:
    """CSV with one row per retained draw: chain, iteration, every parameter, loglik."""
    shrink = draws.prior == "lasso"
    names = draws.parameter_names(shrinkage=shrink)
    arr = draws.parameter_array(shrinkage=shrink)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "iteration"] + names + ["loglik"])
    for c in range(draws.n_chains):
        for d in range(draws.n_draws):
            w.writerow([c, int(draws.iterations[d])] + [repr(float(v)) for v in arr[c, d]]
                       + [repr(float(draws.loglik[c, d]))])
    return buf.getvalue()


def rows_csv(rows: Sequence[dict], fieldnames: Optional[list] = None) -> str:
    if not rows:
        return ",".join(fieldnames or []) + "\n" if fieldnames else ""
    keys = list(fieldnames or rows[0])
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", restval="NA")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("NA" if isinstance(v, float) and not math.isfinite(v) else
                        repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
