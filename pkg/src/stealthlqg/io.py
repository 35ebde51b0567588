"""CSV/JSON writers shared by the CLI and the export helpers."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def config_hash(obj) -> str:
    text = obj if isinstance(obj, str) else json.dumps(obj, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def fmt(x) -> str:
    return FLOAT_FMT % float(x)


def write_csv(path, header, rows, config_sha: str | None = None):
    """Comma-separated, one header row, optional ``# config=<hash>`` comment first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if config_sha is not None:
        lines.append(f"# config={config_sha}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path):
    """Return ``(header, float array)``; ``#`` comment lines are skipped."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    return header, data.reshape(len(lines) - 1, len(header))


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default, allow_nan=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def matrix_header(name, shape):
    """Column names ``name_ij`` in column-major order (1-based)."""
    if len(shape) == 0:
        return [name]
    if len(shape) == 1:
        return [f"{name}_{i + 1}" for i in range(shape[0])]
    rows, cols = shape
    return [f"{name}_{i + 1}{j + 1}" if max(rows, cols) < 10 else f"{name}_{i + 1}_{j + 1}"
            for j in range(cols) for i in range(rows)]


def flatten_cm(values):
    """Flatten per-node arrays column-major: ``(n, r, c) -> (n, r*c)``."""
    v = np.asarray(values)
    if v.ndim == 3:
        return v.transpose(0, 2, 1).reshape(len(v), -1)
    return v.reshape(len(v), -1)


def export_gridfunctions(path, grid, named, config_sha=None):
    """Write several GridFunctions side by side, one row per node."""
    header, cols = ["t"], [grid.times[:, None]]
    for name, gf in named:
        header += matrix_header(name, gf.shape)
        cols.append(flatten_cm(gf.values))
    return write_csv(path, header, np.hstack(cols), config_sha)
