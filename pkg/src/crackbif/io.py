"""CSV and JSON writers for paths, folds, fields and reports.

Floats are written with ``repr`` so that reruns give byte-identical files,
and JSON objects always use sorted keys.  Non-finite floats become ``null``.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .lattice import h1_norm

__all__ = [
    "PATH_COLUMNS",
    "write_json",
    "write_csv",
    "write_path_csv",
    "write_folds_json",
    "write_field_csv",
    "read_field_csv",
    "radius_dirname",
    "initial_field",
    "path_rows",
]

PATH_COLUMNS = ("step", "s", "k", "h1_norm_u", "tau_k", "mu", "class")


def _plain(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def path_rows(domain, points):
    """Rows of the path table, one per path point."""
    return [
        (i, p.s, p.k, h1_norm(domain, p.u), p.tau_k, p.mu, p.cls)
        for i, p in enumerate(points)
    ]


def write_path_csv(path, domain, points) -> Path:
    return write_csv(path, PATH_COLUMNS, path_rows(domain, points))


def write_folds_json(path, folds) -> Path:
    return write_json(path, [f.to_dict() if hasattr(f, "to_dict") else f for f in folds])


def write_field_csv(path, domain, u) -> Path:
    u = np.asarray(u, dtype=float)
    rows = ((int(a), int(b), float(v)) for (a, b), v in zip(domain.labels, u))
    return write_csv(path, ("l1", "l2", "u"), rows)


def read_field_csv(path, domain) -> np.ndarray:
    """Read a site-value CSV onto ``domain``; sites outside it are dropped."""
    u = np.zeros(domain.n_sites)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            i = domain.index((int(row["l1"]), int(row["l2"])))
            if i >= 0:
                u[i] = float(row["u"])
    return u


def radius_dirname(R: float) -> str:
    return f"{R:.6g}"


def initial_field(config, domain):
    """Starting correction for ``config.u_start``: ``None`` (zero) or a CSV field."""
    if config.u_start == "zero":
        return None
    return read_field_csv(config.u_start.split(":", 1)[1], domain)
