"""Byte-stable CSV and JSON emission.

Floats are written with ``repr`` (shortest round-trip decimal), JSON keys are
sorted, and line endings are ``\\n``. Every file of a study carries the study
name as prefix, so several studies can share one output directory.
"""

from __future__ import annotations

import enum
import json
import math
import platform
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

__all__ = ["format_value", "write_csv", "write_json", "jsonable", "versions", "OutputError"]


class OutputError(OSError):
    pass


def format_value(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    if isinstance(v, enum.Enum):
        return str(v.value)
    return str(v)


def _render_csv(rows: Iterable[Mapping[str, Any]], columns: list[str] | None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def write_csv(path: Path, rows: Iterable[Mapping[str, Any]], columns: list[str] | None = None) -> Path:
    return _write(Path(path), _render_csv(rows, columns))


def jsonable(v: Any) -> Any:
    if isinstance(v, Mapping):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else format_value(v)
    if isinstance(v, enum.Enum):
        return v.value
    return v


def write_json(path: Path, obj: Any) -> Path:
    return _write(Path(path), json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n")


def versions() -> dict:
    import numba
    import scipy

    from .. import __version__
    return {"ljmeso": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}
