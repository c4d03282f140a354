"""Trace CSV ingest/export and atomic artifact writes."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import IngestionError
from .predictor import CHANNELS, SIDES, ChannelBundle

HEADER = ("t", "side") + CHANNELS
PathLike = Union[str, os.PathLike]


def _number(cell: str, line: int, column: str) -> float:
    if cell.strip() == "":
        raise IngestionError(f"line {line}: missing value in column {column!r}")
    try:
        v = float(cell)
    except ValueError:
        raise IngestionError(f"line {line}: non-numeric value {cell!r} in column {column!r}") from None
    if not math.isfinite(v):
        raise IngestionError(f"line {line}: non-finite value in column {column!r}")
    return v


def ingest_csv(path: PathLike) -> Tuple[Optional[ChannelBundle], Optional[ChannelBundle]]:
    """Read a trace file into ``(H, R)`` bundles.

    Rows of each side are taken in file order. The sample rate comes from the
    median spacing of ``t`` (1 kHz when a side has a single row). A side with
    no rows is returned as ``None``.
    """
    rows: Dict[str, List[List[float]]] = {s: [] for s in SIDES}
    times: Dict[str, List[float]] = {s: [] for s in SIDES}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("line 1: empty file") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise IngestionError(f"line 1: header must be {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(HEADER):
                raise IngestionError(f"line {line}: expected {len(HEADER)} cells, got {len(row)}")
            side = row[1].strip()
            if side not in SIDES:
                raise IngestionError(f"line {line}: side must be H or R, got {side!r}")
            times[side].append(_number(row[0], line, "t"))
            rows[side].append([_number(c, line, name) for c, name in zip(row[2:], CHANNELS)])
    if not rows["H"] and not rows["R"]:
        raise IngestionError("file holds no data rows")
    out = []
    for side in SIDES:
        if not rows[side]:
            out.append(None)
            continue
        data = np.array(rows[side])
        t = np.array(times[side])
        rate = 1000.0
        if t.size > 1:
            dt = float(np.median(np.diff(t)))
            if not dt > 0:
                raise IngestionError(f"side {side}: time stamps must increase")
            rate = 1.0 / dt
        out.append(ChannelBundle(side, {c: data[:, i] for i, c in enumerate(CHANNELS)}, rate))
    return out[0], out[1]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_bundle(path: PathLike, *bundles: Optional[ChannelBundle]) -> None:
    """Write bundles to the trace CSV schema with 17 significant digits (atomic)."""
    lines = [",".join(HEADER)]
    for b in bundles:
        if b is None:
            continue
        for i in range(len(b)):
            vals = [_fmt(b.channels[c][i]) for c in CHANNELS]
            lines.append(",".join([_fmt(i / b.sample_rate_hz), b.side] + vals))
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_text_atomic(path: PathLike, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_json_atomic(path: PathLike, obj) -> None:
    write_text_atomic(path, dumps(obj))


def write_csv_atomic(path: PathLike, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in r))
    write_text_atomic(path, "\n".join(lines) + "\n")
