"""Versioned text checkpoints for control fields.

Layout: ``key = value`` header lines, a ``---`` separator, then one
whitespace-separated row per step: step midpoint, shape, channel values.
Floats are written with 17 significant digits, so a round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..krotov import ControlField
from ..propagator import time_grid

__all__ = ["FORMAT_VERSION", "FieldCheckpoint", "CheckpointError", "write_checkpoint", "read_checkpoint"]

FORMAT_VERSION = 1
MAGIC = "# noisyoct field checkpoint"


class CheckpointError(ValueError):
    pass


@dataclass
class FieldCheckpoint:
    gate: str
    field: ControlField
    config_hash: str = ""
    iterations: int = 0
    infidelity: float = float("nan")


def _f(x):
    return format(float(x), ".17g")


def write_checkpoint(path, ckpt: FieldCheckpoint):
    fld = ckpt.field
    lines = [
        MAGIC,
        f"version = {FORMAT_VERSION}",
        f"gate = {ckpt.gate}",
        f"channels = {' '.join(fld.names)}",
        f"n_steps = {fld.n_steps}",
        f"horizon = {_f(fld.horizon)}",
        f"config_hash = {ckpt.config_hash}",
        f"iterations = {ckpt.iterations}",
        f"infidelity = {_f(ckpt.infidelity)}",
        "---",
    ]
    mids = fld.midpoints
    vals = fld.array()
    for j in range(fld.n_steps):
        lines.append(" ".join([_f(mids[j]), _f(fld.shape[j])] + [_f(v) for v in vals[j]]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError("not a field checkpoint")
    try:
        sep = lines.index("---")
    except ValueError:
        raise CheckpointError("missing header separator") from None
    header = {}
    for line in lines[1:sep]:
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    try:
        version = int(header["version"])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        names = header["channels"].split()
        n_steps = int(header["n_steps"])
        horizon = float(header["horizon"])
        rows = np.array([[float(x) for x in line.split()] for line in lines[sep + 1:] if line.strip()])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if rows.shape != (n_steps, 2 + len(names)):
        raise CheckpointError("sample table does not match header")
    times = np.linspace(0.0, horizon, n_steps + 1)
    fld = ControlField(times, {k: rows[:, 2 + i] for i, k in enumerate(names)}, rows[:, 1])
    return FieldCheckpoint(
        gate=header.get("gate", ""),
        field=fld,
        config_hash=header.get("config_hash", ""),
        iterations=int(header.get("iterations", 0)),
        infidelity=float(header.get("infidelity", "nan")),
    )


def regrid_check(fld, horizon, dt):
    """True when ``fld`` lives on ``time_grid(0, horizon, dt)``."""
    grid = time_grid(0.0, horizon, dt)
    return len(grid) == len(fld.times) and np.allclose(grid, fld.times, rtol=0, atol=1e-9)
