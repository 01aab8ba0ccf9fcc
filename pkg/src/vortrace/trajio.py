"""Trajectory and velocity file persistence plus metrics documents.

Files are delimiter-separated text with a versioned comment header. All
coordinates are serialized with ``repr`` (shortest round-trip form), so
read(write(x)) reproduces every float bit-for-bit and files diff cleanly.

    # vortrace-trajectory 1
    # t0: 0.0
    # h: 0.01
    # nt: 1001
    # provenance: raw
    # seeds: placement=28
    time,kind,id,x,y
    0.0,tracer,0,1.25,-0.5

Velocity files carry the same header with marker ``vortrace-velocity`` and
columns vx, vy. Rows are sorted by (time, kind, id) and times must land
exactly on the header grid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import TimeGrid
from .errors import SchemaError

TRAJECTORY_MARKER = "vortrace-trajectory"
VELOCITY_MARKER = "vortrace-velocity"
FORMAT_VERSION = 1

KINDS = ("vortex", "tracer")


@dataclass(frozen=True)
class TrajectoryFileData:
    """Parsed contents of a trajectory or velocity file."""

    grid: TimeGrid
    kind: str
    values: np.ndarray  # (nt, n_entities, 2); positions or velocities
    provenance: str
    seeds: dict[str, int]
    circulations: np.ndarray | None
    is_velocity: bool = False

    @property
    def n_entities(self) -> int:
        return self.values.shape[1]


def _format_seeds(seeds: dict[str, int]) -> str:
    return " ".join(f"{k}={v}" for k, v in sorted(seeds.items()))


def _parse_seeds(text: str) -> dict[str, int]:
    seeds = {}
    for item in text.split():
        key, _, val = item.partition("=")
        try:
            seeds[key] = int(val)
        except ValueError as exc:
            raise SchemaError(f"bad seed entry {item!r}") from exc
    return seeds


def write_trajectory_file(
    path: str | Path,
    grid: TimeGrid,
    values: np.ndarray,
    kind: str,
    provenance: str,
    seeds: dict[str, int] | None = None,
    circulations: np.ndarray | None = None,
    velocity: bool = False,
) -> Path:
    """Write one entity kind's track data; returns the path written."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[2] != 2 or values.shape[0] != grid.nt:
        raise ValueError("values must have shape (nt, n_entities, 2)")
    path = Path(path)
    marker = VELOCITY_MARKER if velocity else TRAJECTORY_MARKER
    columns = "time,kind,id,vx,vy" if velocity else "time,kind,id,x,y"
    n = values.shape[1]
    lines = [
        f"# {marker} {FORMAT_VERSION}",
        f"# t0: {grid.t0!r}",
        f"# h: {grid.h!r}",
        f"# nt: {grid.nt}",
        f"# provenance: {provenance}",
        f"# seeds: {_format_seeds(seeds or {})}",
    ]
    if circulations is not None:
        lines.append(
            "# circulations: " + ",".join(repr(float(g)) for g in circulations)
        )
    lines.append(columns)
    for k in range(grid.nt):
        t = grid.t0 + grid.h * k
        row = values[k]
        for i in range(n):
            lines.append(f"{t!r},{kind},{i},{row[i, 0]!r},{row[i, 1]!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trajectory_file(path: str | Path) -> TrajectoryFileData:
    """Parse a trajectory or velocity file, validating the schema strictly."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    header: dict[str, str] = {}
    marker = None
    body_start = 0
    for idx, line in enumerate(lines):
        if line.startswith("# "):
            content = line[2:]
            if marker is None:
                parts = content.split()
                if len(parts) != 2 or parts[0] not in (TRAJECTORY_MARKER, VELOCITY_MARKER):
                    raise SchemaError(f"{path}:1: unrecognized format marker {content!r}")
                if parts[1] != str(FORMAT_VERSION):
                    raise SchemaError(f"{path}:1: unsupported format version {parts[1]}")
                marker = parts[0]
            else:
                key, _, val = content.partition(": ")
                header[key] = val
        else:
            body_start = idx
            break
    if marker is None:
        raise SchemaError(f"{path}: missing format marker")
    is_velocity = marker == VELOCITY_MARKER
    expected_cols = "time,kind,id,vx,vy" if is_velocity else "time,kind,id,x,y"
    if body_start >= len(lines) or lines[body_start] != expected_cols:
        raise SchemaError(f"{path}:{body_start + 1}: expected column row {expected_cols!r}")

    try:
        grid = TimeGrid(float(header["t0"]), float(header["h"]), int(header["nt"]))
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: bad grid header: {exc}") from exc
    provenance = header.get("provenance", "raw")
    seeds = _parse_seeds(header.get("seeds", ""))
    circulations = None
    if "circulations" in header:
        circulations = np.array(
            [float(v) for v in header["circulations"].split(",")], dtype=np.float64
        )

    reader = csv.reader(lines[body_start + 1:])
    rows = []
    kind_seen = None
    for offset, row in enumerate(reader):
        lineno = body_start + 2 + offset
        if not row:
            continue
        if len(row) != 5:
            raise SchemaError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
        t_str, kind, ident, a_str, b_str = row
        if kind not in KINDS:
            raise SchemaError(f"{path}:{lineno}: unknown kind {kind!r}")
        if kind_seen is None:
            kind_seen = kind
        elif kind != kind_seen:
            raise SchemaError(f"{path}:{lineno}: mixed kinds in one file")
        try:
            rows.append((float(t_str), int(ident), float(a_str), float(b_str), lineno))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: bad number: {exc}") from exc
    if kind_seen is None:
        raise SchemaError(f"{path}: no data rows")

    ids = sorted({r[1] for r in rows})
    n = len(ids)
    if ids != list(range(n)):
        raise SchemaError(f"{path}: entity ids must be 0..{n - 1}")
    if len(rows) != grid.nt * n:
        raise SchemaError(
            f"{path}: expected {grid.nt * n} data rows, found {len(rows)}"
        )
    values = np.empty((grid.nt, n, 2))
    expected_index = 0
    for t_val, ident, a, b, lineno in rows:
        k, i = divmod(expected_index, n)
        t_expected = grid.t0 + grid.h * k
        if ident != i or t_val != t_expected:
            raise SchemaError(
                f"{path}:{lineno}: rows must be sorted by (time, id) with grid times; "
                f"expected t={t_expected!r} id={i}"
            )
        values[k, i, 0] = a
        values[k, i, 1] = b
        expected_index += 1
    if not np.isfinite(values).all():
        raise SchemaError(f"{path}: non-finite values")
    return TrajectoryFileData(
        grid, kind_seen, values, provenance, seeds, circulations, is_velocity
    )


def write_metrics(path: str | Path, document: dict) -> Path:
    """Serialize a metrics document as deterministic JSON."""
    path = Path(path)
    path.write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def read_metrics(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
