"""Trace CSV, solution vector and key=value config files."""
from __future__ import annotations

import json

import numpy as np

from .solver import Trace

HEADER = "epoch,inner_iter,time_ms,objective,gap,max_staleness"


def fmt(v: float) -> str:
    """17 significant digits, locale independent."""
    return format(float(v), ".17g")


def write_trace(trace: Trace, path, *, comment: dict | str | None = None, timing: bool = True):
    """Write the trace as CSV.

    ``comment`` (a dict is JSON-encoded) goes on a leading ``#`` line.
    ``timing=False`` leaves ``time_ms`` empty so reruns are byte-identical.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    lines = []
    if comment is not None:
        text = comment if isinstance(comment, str) else json.dumps(comment, sort_keys=True)
        lines.append("# " + text.replace("\n", " "))
    lines.append(HEADER)
    for r in trace.records:
        gap = "" if r.gap is None else fmt(r.gap)
        t = fmt(r.time_ms) if timing else ""
        lines.append(f"{r.epoch},{r.inner_iter},{t},{fmt(r.objective)},{gap},{r.max_staleness}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path):
    """Return (comment or None, list of row dicts with floats / None)."""
    comment = None
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        comment = lines.pop(0)[1:].strip()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path}: missing trace header")
    for line in lines[1:]:
        vals = line.split(",")
        row = {}
        for key, v in zip(HEADER.split(","), vals):
            row[key] = None if v == "" else (int(v) if key in ("epoch", "inner_iter", "max_staleness")
                                             else float(v))
        rows.append(row)
    return comment, rows


def write_vector(x, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("".join(fmt(v) + "\n" for v in np.asarray(x, dtype=np.float64)))


def read_vector(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=1)


def read_config(path) -> dict[str, str]:
    """``key = value`` per line; ``#`` starts a comment. Keys use the long flag names."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip().lstrip("-").replace("-", "_")
            if not sep or not key:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            out[key] = val.strip()
    return out
