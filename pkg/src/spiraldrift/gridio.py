"""File formats for grid fields: binary dumps and CSV exports.

A grid field file is a short ASCII header followed by the raw row-major
float64 payload.  Arrays are indexed ``[i, j]`` with ``x = x0 + i*dx`` and
``y = y0 + j*dx``, so rows of the payload hold constant-x slices.
"""

from __future__ import annotations

import io

import numpy as np

__all__ = ["save_grid", "load_grid", "grid_to_csv"]

_MAGIC = "gridfield v1"


def save_grid(path, values, dx, x0, y0, name="field"):
    """Write one grid field to a binary file with a small text header."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("grid field must be 2D")
    nx, ny = values.shape
    header = (
        f"{_MAGIC}\n"
        f"name {name}\n"
        f"nx {nx}\n"
        f"ny {ny}\n"
        f"dx {dx!r}\n"
        f"x0 {x0!r}\n"
        f"y0 {y0!r}\n"
        "\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(values.tobytes())


def load_grid(path):
    """Read a grid field file; returns (values, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise ValueError("missing grid field header terminator")
    lines = blob[:sep].decode("ascii").splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not a grid field file")
    meta = {}
    for line in lines[1:]:
        key, _, val = line.partition(" ")
        meta[key] = val
    nx, ny = int(meta["nx"]), int(meta["ny"])
    meta["nx"], meta["ny"] = nx, ny
    for key in ("dx", "x0", "y0"):
        meta[key] = float(meta[key])
    payload = blob[sep + 2 :]
    values = np.frombuffer(payload, dtype=np.float64, count=nx * ny).reshape(nx, ny).copy()
    return values, meta


def grid_to_csv(path_or_buf, values, dx, x0, y0, name="field"):
    """Plot-ready CSV export: one ``x,y,value`` row per node, x-major order."""
    values = np.asarray(values, dtype=float)
    nx, ny = values.shape
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        fh.write(f"x,y,{name}\n")
        for i in range(nx):
            x = x0 + i * dx
            for j in range(ny):
                y = y0 + j * dx
                fh.write(f"{x:.17g},{y:.17g},{values[i, j]:.17g}\n")
    finally:
        if own:
            fh.close()


def write_csv(path, columns, header):
    """Small deterministic CSV writer (fixed float formatting)."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(n):
            fh.write(",".join(f"{c[k]:.17g}" for c in cols) + "\n")


def read_csv(path):
    """Read a numeric CSV written by `write_csv`; returns (header, 2D array)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data
