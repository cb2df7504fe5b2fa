"""Binary-image steps: thresholding, thinning, dilation, shell and assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..fields import GridSpec, ScalarField


class EmptySkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryImage:
    grid: GridSpec
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.shape != self.grid.shape:
            raise ValueError(f"bits shape {b.shape} != grid shape {self.grid.shape}")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("binary image values must be 0 or 1")
        b = b.astype(np.uint8)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def mask(self) -> np.ndarray:
        return self.bits.astype(bool)

    def count(self) -> int:
        return int(self.bits.sum())


def binarize(values, level: float = 0.5) -> np.ndarray:
    return np.asarray(values) >= level


def _neighbours(img: np.ndarray):
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) in array-index orientation, zero padded."""
    p = np.pad(img, 1)
    c = slice(1, -1)
    return (p[:-2, c], p[:-2, 2:], p[c, 2:], p[2:, 2:],
            p[2:, c], p[2:, :-2], p[c, :-2], p[:-2, :-2])


def zhang_suen_thin(img: np.ndarray) -> np.ndarray:
    """Zhang-Suen parallel thinning to a one-pixel-wide skeleton."""
    sk = np.asarray(img, dtype=bool).astype(np.uint8)
    while True:
        changed = False
        for step in (0, 1):
            P = _neighbours(sk)
            B = sum(P)
            seq = P + (P[0],)
            A = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.uint8) for k in range(8))
            p2, p4, p6, p8 = P[0], P[2], P[4], P[6]
            if step == 0:
                c1, c2 = p2 * p4 * p6, p4 * p6 * p8
            else:
                c1, c2 = p2 * p4 * p8, p2 * p6 * p8
            kill = (sk == 1) & (B >= 2) & (B <= 6) & (A == 1) & (c1 == 0) & (c2 == 0)
            if kill.any():
                sk[kill] = 0
                changed = True
        if not changed:
            return sk.astype(bool)


def dilate_square(img: np.ndarray, size: int) -> np.ndarray:
    if size < 1:
        raise ValueError("structuring element size must be >= 1")
    return ndimage.binary_dilation(img, structure=np.ones((size, size), bool))


def realize_lattice(gamma1: ScalarField, gamma2: ScalarField | None, N_dilate: int) -> BinaryImage:
    """Threshold both stripe families, unite, thin and dilate."""
    union = binarize(gamma1.values)
    if gamma2 is not None:
        if gamma2.grid != gamma1.grid:
            raise ValueError("stripe families must share a grid")
        union |= binarize(gamma2.values)
    skel = zhang_suen_thin(union)
    if not skel.any():
        raise EmptySkeletonError("thresholded stripe field is empty; nothing to skeletonize")
    return BinaryImage(gamma1.grid, dilate_square(skel, N_dilate))


def extract_shell(rho_f: ScalarField, t_shell: int) -> BinaryImage:
    """Boundary band of the binarized density, about ``t_shell`` pixels thick."""
    if t_shell < 0:
        raise ValueError("t_shell must be >= 0")
    solid = binarize(rho_f.values)
    if t_shell == 0:
        return BinaryImage(rho_f.grid, np.zeros(solid.shape, np.uint8))
    k = 2 * t_shell + 1
    core = ndimage.binary_erosion(solid, structure=np.ones((k, k), bool), border_value=0)
    return BinaryImage(rho_f.grid, solid & ~core)


def assemble_structure(rho_f: ScalarField, xi_f: ScalarField, shell: BinaryImage,
                       lattice: BinaryImage) -> BinaryImage:
    """Lattice infill inside the base material, the shell, and the solid-filled region."""
    grids = {rho_f.grid, xi_f.grid, shell.grid, lattice.grid}
    if len(grids) != 1:
        raise ValueError("all inputs must share the fine grid")
    base = binarize(rho_f.values)
    lat = lattice.mask & base
    infill = binarize(np.asarray(rho_f.values) * lat + shell.bits)
    solid = binarize(xi_f.values) & base
    return BinaryImage(rho_f.grid, infill | solid)
