"""Plain-text artifacts: observation CSVs, field grids, JSON results."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .gpr import ObservationSet
from .grid import Grid


def _fmt(x: float) -> str:
    return repr(float(x))


def write_observations(path, obs: ObservationSet) -> None:
    noise = np.diag(obs.noise_cov)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "value", "noise_var"])
        for (x1, x2), v, s in zip(obs.locations, obs.values, noise):
            w.writerow([_fmt(x1), _fmt(x2), _fmt(v), _fmt(s)])


def read_observations(path) -> ObservationSet:
    """Observation CSV with columns x1, x2, value and an optional noise_var column."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValueError(f"{path}: empty observation file")
    header = [h.strip() for h in rows[0]]
    for col in ("x1", "x2", "value"):
        if col not in header:
            raise ValueError(f"{path}: missing column {col!r}")
    ix = [header.index(c) for c in ("x1", "x2", "value")]
    jn = header.index("noise_var") if "noise_var" in header else None
    loc, val, noise = [], [], []
    for lineno, r in enumerate(rows[1:], 2):
        try:
            loc.append((float(r[ix[0]]), float(r[ix[1]])))
            val.append(float(r[ix[2]]))
            noise.append(float(r[jn]) if jn is not None and r[jn].strip() else 0.0)
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: malformed row {r!r}") from None
    if np.any(np.array(noise) < 0):
        raise ValueError(f"{path}: negative noise variance")
    return ObservationSet(np.array(loc).reshape(-1, 2), np.array(val), np.diag(noise))


def field_to_csv(grid: Grid, values, header_lines=()) -> str:
    """Row-major grid: one line per x2 row (j = 0 first), nx comma-separated values."""
    img = grid.as_image(values)
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    for row in img:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_field(path, grid: Grid, values, header_lines=()) -> None:
    Path(path).write_text(field_to_csv(grid, values, header_lines))


def read_field(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]
    return np.array([[float(v) for v in row.split(",")] for row in rows])


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
