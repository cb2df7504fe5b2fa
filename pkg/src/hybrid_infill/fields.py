"""Regular-grid fields and the primitives shared by every stage.

Arrays are stored with shape ``(ny, nx)``: row ``j`` is the ``j``-th row of
elements counted from the bottom edge (y grows with the row index), column
``i`` counts along x.  Element ``(i, j)`` has its center at
``((i + 0.5) * h, (j + 0.5) * h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import ndimage

DESIGN = 0
PASSIVE_VOID = 1
PASSIVE_SOLID = 2


class FieldRangeError(ValueError):
    """A field value lies outside the range an operation accepts."""

    def __init__(self, message: str, index: tuple[int, int]):
        super().__init__(f"{message} at element (row={index[0]}, col={index[1]})")
        self.index = index


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    h: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs at least one element per axis, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"element size must be positive, got {self.h}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def width(self) -> float:
        return self.nx * self.h

    @property
    def height(self) -> float:
        return self.ny * self.h

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(self.nx * factor, self.ny * factor, self.h / factor)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Element-center coordinates as two ``(ny, nx)`` arrays."""
        x = (np.arange(self.nx) + 0.5) * self.h
        y = (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y)


def _frozen(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.n_elements:
            raise ValueError(f"expected {self.grid.n_elements} values, got {vals.size}")
        object.__setattr__(self, "values", _frozen(vals, self.grid.shape))

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True)
class OrientationField:
    grid: GridSpec
    angles: np.ndarray
    encoded: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "angles", _frozen(self.angles, self.grid.shape))
        if self.encoded is not None:
            object.__setattr__(self, "encoded", _frozen(self.encoded, self.grid.shape))


@dataclass(frozen=True)
class DesignMask:
    grid: GridSpec
    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=np.int8).reshape(self.grid.shape)
        bad = ~np.isin(flags, (DESIGN, PASSIVE_VOID, PASSIVE_SOLID))
        if bad.any():
            raise ValueError(f"unknown mask flag at {tuple(np.argwhere(bad)[0])}")
        flags = flags.copy()
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    @classmethod
    def all_design(cls, grid: GridSpec) -> "DesignMask":
        return cls(grid, np.zeros(grid.shape, dtype=np.int8))

    @property
    def design(self) -> np.ndarray:
        return self.flags == DESIGN

    @property
    def void(self) -> np.ndarray:
        return self.flags == PASSIVE_VOID

    @property
    def solid(self) -> np.ndarray:
        return self.flags == PASSIVE_SOLID


# --------------------------------------------------------------------------
# smoothing filter

def cone_kernel(radius: float) -> np.ndarray:
    """Hat weights ``max(0, radius - dist)`` on the smallest enclosing stencil."""
    r = max(int(math.ceil(radius)) - 1, 0)
    off = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(off, off)
    return np.maximum(0.0, radius - np.hypot(dx, dy))


def _convolve(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Kernel is point-symmetric, so correlation and convolution coincide.
    return ndimage.correlate(values, kernel, mode="constant", cval=0.0)


def filter_weight_sums(shape: tuple[int, int], radius: float) -> np.ndarray:
    return _convolve(np.ones(shape), cone_kernel(radius))


def smooth_array(values: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0:
        return np.array(values, dtype=float)
    kernel = cone_kernel(radius)
    return _convolve(np.asarray(values, float), kernel) / _convolve(np.ones(values.shape), kernel)


def smooth_array_adjoint(grad: np.ndarray, radius: float) -> np.ndarray:
    """Transpose of :func:`smooth_array` applied to a gradient array."""
    if radius <= 0:
        return np.array(grad, dtype=float)
    kernel = cone_kernel(radius)
    return _convolve(np.asarray(grad, float) / _convolve(np.ones(grad.shape), kernel), kernel)


def smooth_filter(f: ScalarField, radius: float) -> ScalarField:
    """Linear-cone density filter with boundary-renormalized weights."""
    if radius < 0:
        raise ValueError("smoothing radius must be non-negative")
    if radius == 0:
        return f
    return f.with_values(smooth_array(f.values, radius))


# --------------------------------------------------------------------------
# projection

def project_array(values, beta: float, delta: float) -> np.ndarray:
    num = np.tanh(beta * delta) + np.tanh(beta * (np.asarray(values, float) - delta))
    return num / (np.tanh(beta * delta) + np.tanh(beta * (1.0 - delta)))


def project_derivative(values, beta: float, delta: float) -> np.ndarray:
    t = np.tanh(beta * (np.asarray(values, float) - delta))
    return beta * (1.0 - t * t) / (np.tanh(beta * delta) + np.tanh(beta * (1.0 - delta)))


def heaviside_project(f: ScalarField, beta: float, delta: float) -> ScalarField:
    if not beta > 0:
        raise ValueError("projection sharpness must be positive")
    if not 0 < delta < 1:
        raise ValueError("projection threshold must lie in (0, 1)")
    out = np.clip(project_array(f.values, beta, delta), 0.0, 1.0)
    return f.with_values(out)


# --------------------------------------------------------------------------
# orientation encoding

def encode_angles(angles) -> np.ndarray:
    return (np.asarray(angles, float) + np.pi) / (2.0 * np.pi)


def decode_angles(encoded) -> np.ndarray:
    return 2.0 * np.pi * np.asarray(encoded, float) - np.pi


def encode_theta(t: OrientationField, direction: str = "to-unit") -> OrientationField:
    if direction == "to-unit":
        a = t.angles
        bad = ~((a > -np.pi) & (a <= np.pi))
        if bad.any():
            raise FieldRangeError("angle outside (-pi, pi]", tuple(np.argwhere(bad)[0]))
        return OrientationField(t.grid, a, encode_angles(a))
    if direction == "from-unit":
        if t.encoded is None:
            raise ValueError("orientation field carries no encoded channel")
        e = t.encoded
        bad = ~((e >= 0.0) & (e <= 1.0))
        if bad.any():
            raise FieldRangeError("encoded value outside [0, 1]", tuple(np.argwhere(bad)[0]))
        return OrientationField(t.grid, decode_angles(e), e)
    raise ValueError(f"unknown direction {direction!r}")


def orientation_from_encoded(grid: GridSpec, encoded) -> OrientationField:
    enc = np.asarray(encoded, float).reshape(grid.shape)
    return encode_theta(OrientationField(grid, np.zeros(grid.shape), enc), "from-unit")


# --------------------------------------------------------------------------
# refinement

def _axis_weights(n_coarse: int, factor: int):
    # fine center in coarse-center index coordinates
    pos = (np.arange(n_coarse * factor) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, n_coarse - 1)
    lo = np.minimum(np.floor(pos).astype(int), max(n_coarse - 2, 0))
    hi = np.minimum(lo + 1, n_coarse - 1)
    return lo, hi, pos - lo


def refine_array(values: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling from element centers (clamped outside the hull)."""
    if factor < 1:
        raise ValueError("refinement factor must be >= 1")
    values = np.asarray(values, float)
    if factor == 1:
        return values.copy()
    ny, nx = values.shape
    xl, xh, tx = _axis_weights(nx, factor)
    yl, yh, ty = _axis_weights(ny, factor)
    a = values[np.ix_(yl, xl)]
    b = values[np.ix_(yl, xh)]
    c = values[np.ix_(yh, xl)]
    d = values[np.ix_(yh, xh)]
    tx = tx[None, :]
    ty = ty[:, None]
    bottom = a + tx * (b - a)
    top = c + tx * (d - c)
    return bottom + ty * (top - bottom)


def refine_field(f: Union[ScalarField, OrientationField], factor: int):
    if factor < 1:
        raise ValueError("refinement factor must be >= 1")
    if factor == 1:
        return f
    grid = f.grid.refined(factor)
    if isinstance(f, ScalarField):
        return ScalarField(grid, refine_array(f.values, factor))
    # Stripe orientation has period pi; interpolate the doubled-angle vector.
    c = refine_array(np.cos(2.0 * f.angles), factor)
    s = refine_array(np.sin(2.0 * f.angles), factor)
    if np.ptp(f.angles) == 0.0:
        angles = np.full(grid.shape, f.angles.flat[0])
    else:
        angles = 0.5 * np.arctan2(s, c)
    enc = encode_angles(angles) if f.encoded is not None else None
    return OrientationField(grid, angles, enc)
