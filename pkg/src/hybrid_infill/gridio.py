"""Field serialization.

CSV layout: a header line ``nx,ny,h``, one line with those three values, then
``ny`` rows of ``nx`` comma-separated values (row 0 is the bottom row).

Binary layout (little endian)::

    b"EDHF"  u32 nx  u32 ny  f64 h  f64 values[ny * nx] (row-major)

Several fields of one grid can be stacked in a single container by writing
further value blocks; :func:`read_binary` returns all blocks found.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .fields import GridSpec, ScalarField

MAGIC = b"EDHF"
_HEADER = struct.Struct("<4sIId")


def write_csv(f: ScalarField, path) -> None:
    g = f.grid
    lines = ["nx,ny,h", f"{g.nx},{g.ny},{g.h!r}"]
    for row in f.values:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> ScalarField:
    lines = Path(path).read_text().strip().splitlines()
    if lines[0].strip() != "nx,ny,h":
        raise ValueError(f"{path}: missing 'nx,ny,h' header")
    nx, ny, h = lines[1].split(",")
    grid = GridSpec(int(nx), int(ny), float(h))
    rows = [[float(v) for v in line.split(",")] for line in lines[2:]]
    values = np.array(rows, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"{path}: expected {grid.shape} values, found {values.shape}")
    return ScalarField(grid, values)


def pack_grid(grid: GridSpec, blocks: Sequence[np.ndarray]) -> bytes:
    parts = [_HEADER.pack(MAGIC, grid.nx, grid.ny, float(grid.h))]
    for block in blocks:
        arr = np.asarray(block, dtype="<f8")
        if arr.size != grid.n_elements:
            raise ValueError(f"block of {arr.size} values does not match grid {grid.shape}")
        parts.append(arr.reshape(-1).tobytes())
    return b"".join(parts)


def unpack_grid(data: bytes) -> tuple[GridSpec, list[np.ndarray]]:
    if len(data) < _HEADER.size:
        raise ValueError("truncated grid container")
    magic, nx, ny, h = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    grid = GridSpec(nx, ny, h)
    body = data[_HEADER.size:]
    block = 8 * grid.n_elements
    if len(body) % block:
        raise ValueError("grid container body is not a whole number of value blocks")
    flat = np.frombuffer(body, dtype="<f8").astype(float)
    return grid, [b.reshape(grid.shape) for b in flat.reshape(-1, grid.ny, grid.nx)]


def write_binary(path, grid: GridSpec, *blocks: np.ndarray) -> None:
    Path(path).write_bytes(pack_grid(grid, blocks))


def read_binary(path) -> tuple[GridSpec, list[np.ndarray]]:
    return unpack_grid(Path(path).read_bytes())


def write_field(f: ScalarField, path) -> None:
    write_binary(path, f.grid, f.values)


def read_field(path) -> ScalarField:
    grid, blocks = read_binary(path)
    return ScalarField(grid, blocks[0])
