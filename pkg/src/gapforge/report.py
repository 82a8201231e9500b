"""Deterministic JSON/CSV emission with atomic writes.

Floats are written with 17 significant digits so that every value
round-trips exactly; non-finite floats become ``null`` in JSON and ``nan``
in CSV.
"""

from __future__ import annotations

import io
import math
import os
import platform
import tempfile
from pathlib import Path

import numpy as np

from . import __version__


def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text for nested dicts/lists of numbers, strings, bools and None."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_string(str(k))}: {dumps(v, indent, _level + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return _string(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _string(s: str) -> str:
    import json

    return json.dumps(s, ensure_ascii=False)


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, dumps(obj) + "\n")


def write_csv(path, columns: dict) -> None:
    """Columns of equal length under a single header row."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    buf = io.StringIO()
    np.savetxt(buf, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")
    atomic_write(path, buf.getvalue())


def read_csv(path) -> dict:
    """Inverse of :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def provenance(config: dict, grid: dict | None = None) -> dict:
    out = {
        "program": "gapforge",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
    }
    if grid is not None:
        out["grid"] = grid
    return out
