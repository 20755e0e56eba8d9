"""Report serialization: JSON with 17 significant digits and CSV tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ReportWriteError, SerializationError


def _float(v: float) -> str:
    if not math.isfinite(v):
        raise SerializationError(f"non-finite number {v!r} cannot be written")
    text = format(v, ".17g")
    # keep floats recognizable as floats when read back
    return text if any(c in text for c in ".en") else text + ".0"


def _plain(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with sorted keys, floats at 17 significant digits, NaN forbidden."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj, key=str):
            items.append(f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}")
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise SerializationError(f"cannot serialize {type(obj).__name__}")


def _csv_cell(v) -> str:
    v = _plain(v)
    if isinstance(v, float):
        return _float(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else str(v)


def write_csv(rows: list, path: Union[str, Path]) -> Path:
    """One header row (union of keys in first-seen order) plus one row per record."""
    path = Path(path)
    header: list = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_csv_cell(r.get(k)) for k in header])
    except OSError as err:
        raise ReportWriteError(f"cannot write {path}: {err}") from err
    return path


def emit_report(report, fmt: str, path: Union[str, Path]) -> Path:
    """Write a report (dict or object with ``to_dict``) as JSON, or its ``rows`` as CSV."""
    path = Path(path)
    data = _plain(report)
    if fmt == "json":
        text = dumps(data) + "\n"
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as err:
            raise ReportWriteError(f"cannot write {path}: {err}") from err
        return path
    if fmt == "csv":
        rows = data.get("rows") if isinstance(data, dict) else None
        if rows is None:
            rows = [_flatten(data)]
        return write_csv(rows, path)
    raise SerializationError(f"unknown format {fmt!r}")


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_report(path: Union[str, Path]) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
