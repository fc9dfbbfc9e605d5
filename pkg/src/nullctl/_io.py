"""Atomic file output and JSON helpers shared by modules and the CLI."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import mpmath
import numpy as np


def mp_text(v, digits: int = 17) -> str:
    """Decimal text for an mpf, switching to 10^(log10|v|) form for huge exponents."""
    v = mpmath.mpf(v)
    if v == 0 or not mpmath.isfinite(v):
        return mpmath.nstr(v, digits)
    mag = abs(v.exp + int(v.man).bit_length())
    if mag < 10**6:
        return mpmath.nstr(v, digits)
    sign = "-" if v < 0 else ""
    return f"{sign}10^({mpmath.nstr(mpmath.log10(abs(v)), digits)})"


def to_jsonable(obj):
    """Convert numpy and mpmath values into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, mpmath.mpf):
        f = float(obj)
        if (f == 0.0 and obj != 0) or not np.isfinite(f):
            return mp_text(obj)
        return f
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def atomic_write_text(path, text: str) -> Path:
    """Write text to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, mpmath.mpf):
        f = float(v)
        return repr(f) if (f != 0.0 or v == 0) and np.isfinite(f) else mp_text(v)
    if v is None:
        return ""
    if isinstance(v, int) and abs(v) > 10**30:
        return str(v)
    return v


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
