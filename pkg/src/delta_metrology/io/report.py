"""Deterministic JSON reports.

Keys are sorted and floats written with ``repr`` precision, so the same
inputs and seed give byte-identical files.  Every number sits next to its
unit: ``{"value": 1.31e14, "error": 3e12, "unit": "cm^-2"}``.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from .._jit import backend
from ..core import Measurement

TOOL = "delta-metrology"


def quantity(value, unit, error=None):
    """One reported number; ``value`` may be a Measurement."""
    if isinstance(value, Measurement):
        value, error = value.value, value.error if error is None else error
    out = {"value": _clean(float(value)), "unit": unit}
    if error is not None:
        out["error"] = _clean(float(error))
    return out


def _clean(x):
    # JSON has no inf/nan; keep them readable and explicit
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def fingerprint_path(path) -> str:
    """sha256 of a file, or of a scan directory's files in sorted order."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for f in sorted(q for q in p.rglob("*") if q.is_file()):
            h.update(str(f.relative_to(p)).encode())
            h.update(f.read_bytes())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


def new_report(command, config=None, inputs=(), seed=None) -> dict:
    doc = {
        "tool": {"name": TOOL, "version": __version__, "backend": backend()},
        "command": command,
        "inputs": {str(p): fingerprint_path(p) for p in inputs},
        "results": {},
        "warnings": [],
    }
    if config is not None:
        doc["seed"] = config.seed if seed is None else seed
        doc["config"] = {"path": config.path, "sha256": config.sha256,
                         "resolved": config.echo()}
        doc["defaults"] = dict(config.defaults)
    elif seed is not None:
        doc["seed"] = seed
    return doc


def dumps(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, ensure_ascii=True,
                      allow_nan=False) + "\n"


def write_report(path, doc):
    path = Path(path)
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def load_report(path) -> dict:
    from ..errors import ParseError

    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("file not found", p) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", p, exc.lineno) from None


def measurement_from(entry) -> Optional[Measurement]:
    """Inverse of ``quantity`` for values stored in a report."""
    if entry is None:
        return None
    v, e = entry["value"], entry.get("error", 0.0)
    return Measurement(float(v), float(e))


TABLE_COLUMNS = (
    ("n_xrf", "cm^-2"), ("n_hall", "cm^-2"), ("activation", "%"),
    ("n_stm", "cm^-2"), ("n_sims", "cm^-2"), ("t_mr", "nm"), ("t_sims", "nm"),
)


def summary_table(results: dict) -> str:
    """Plain-text one-row density/thickness table for the terminal."""
    head, row = [], []
    for key, unit in TABLE_COLUMNS:
        head.append(f"{key} [{unit}]")
        e = results.get(key)
        if e is None:
            row.append("-")
        else:
            fmt = ".3g" if unit != "%" else ".1f"
            row.append(f"{e['value']:{fmt}} +/- {e.get('error', 0.0):{fmt}}")
    width = [max(len(h), len(r)) for h, r in zip(head, row)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, width))
                     for line in (head, row))
