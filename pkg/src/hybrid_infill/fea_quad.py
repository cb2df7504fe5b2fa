"""Plane-stress FEA on the regular quad grid (bilinear elements, 2x2 Gauss).

Node ``(i, j)`` has index ``j * (nx + 1) + i`` and owns dofs ``2n`` (u_x) and
``2n + 1`` (u_y).  Element nodes run counter-clockwise from the lower-left
corner.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import GridSpec, OrientationField, encode_angles

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 200 * 200
RESIDUAL_TOL = 1e-9


class SingularSystemError(RuntimeError):
    """The stiffness matrix has an unconstrained rigid-body mode."""


@dataclass(frozen=True)
class ElementStress:
    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.sxx, self.syy, self.sxy], axis=-1)

    @classmethod
    def from_array(cls, s: np.ndarray) -> "ElementStress":
        s = np.asarray(s, float)
        return cls(s[..., 0], s[..., 1], s[..., 2])


@dataclass
class QuadModel:
    grid: GridSpec
    fixed_dofs: np.ndarray
    loads: np.ndarray
    per_element_C: np.ndarray
    prescribed: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=int))
        n_dof = n_dofs(self.grid)
        self.loads = np.asarray(self.loads, float).reshape(n_dof)
        C = np.asarray(self.per_element_C, float)
        if C.shape == (3, 3):
            C = np.broadcast_to(C, (self.grid.n_elements, 3, 3))
        if C.shape != (self.grid.n_elements, 3, 3):
            raise ValueError(f"per_element_C must have shape ({self.grid.n_elements}, 3, 3)")
        if not np.allclose(C, np.swapaxes(C, 1, 2), rtol=1e-12, atol=1e-14):
            raise ValueError("constitutive matrices must be symmetric")
        if self.fixed_dofs.size == 0:
            raise ValueError("a model without fixed dofs is singular")
        self.per_element_C = C
        if self.prescribed is not None:
            self.prescribed = np.asarray(self.prescribed, float).reshape(self.fixed_dofs.shape)


def n_dofs(grid: GridSpec) -> int:
    return 2 * (grid.nx + 1) * (grid.ny + 1)


def node_index(grid: GridSpec, i, j):
    return np.asarray(j) * (grid.nx + 1) + np.asarray(i)


def load_vector(grid: GridSpec, loads: dict) -> np.ndarray:
    """Dense load vector from a ``{dof: force}`` mapping."""
    f = np.zeros(n_dofs(grid))
    for dof, value in loads.items():
        f[int(dof)] += value
    return f


@lru_cache(maxsize=8)
def _element_dofs(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    n0 = j * (nx + 1) + i
    nodes = np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)
    dofs = np.empty((nodes.shape[0], 8), dtype=int)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return dofs


def element_dofs(grid: GridSpec) -> np.ndarray:
    """``(n_elements, 8)`` dof map, element index ``j * nx + i``."""
    return _element_dofs(grid.nx, grid.ny)


_XI = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


def strain_matrix(h: float, xi: float = 0.0, eta: float = 0.0) -> np.ndarray:
    """3x8 strain-displacement matrix of a square element of side ``h``."""
    dN_dxi = 0.25 * _XI[:, 0] * (1 + _XI[:, 1] * eta)
    dN_deta = 0.25 * _XI[:, 1] * (1 + _XI[:, 0] * xi)
    dx, dy = dN_dxi * 2.0 / h, dN_deta * 2.0 / h
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


@lru_cache(maxsize=8)
def stiffness_basis(h: float) -> np.ndarray:
    """``K[a, b]`` such that ``Ke(C) = sum_ab C[a, b] * K[a, b]``."""
    g = 1.0 / np.sqrt(3.0)
    basis = np.zeros((3, 3, 8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            B = strain_matrix(h, xi, eta)
            # det J = (h/2)^2, unit Gauss weights
            basis += np.einsum("ai,bj->abij", B, B) * (h * h / 4.0)
    basis.setflags(write=False)
    return basis


def element_matrices(grid: GridSpec, C: np.ndarray) -> np.ndarray:
    return np.einsum("eab,abij->eij", C, stiffness_basis(grid.h), optimize=True)


def assemble(grid: GridSpec, C: np.ndarray) -> sp.csr_matrix:
    ke = element_matrices(grid, C)
    dofs = element_dofs(grid)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = n_dofs(grid)
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))


def rigid_body_modes(grid: GridSpec) -> np.ndarray:
    x = np.tile(np.arange(grid.nx + 1), grid.ny + 1) * grid.h
    y = np.repeat(np.arange(grid.ny + 1), grid.nx + 1) * grid.h
    return rigid_modes_from_coords(np.column_stack([x, y]))


def rigid_modes_from_coords(xy: np.ndarray) -> np.ndarray:
    n = xy.shape[0]
    R = np.zeros((2 * n, 3))
    R[0::2, 0] = 1.0
    R[1::2, 1] = 1.0
    c = xy - xy.mean(axis=0)
    R[0::2, 2] = -c[:, 1]
    R[1::2, 2] = c[:, 0]
    return R


def free_rigid_modes(R: np.ndarray, fixed: np.ndarray) -> list:
    """Rigid-body motions (by name) that the fixed dofs leave unconstrained."""
    A = R[fixed] if fixed.size else np.zeros((1, 3))
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * max(s.max(initial=0.0), 1.0)))
    names = []
    for v in vt[rank:]:
        k = int(np.argmax(np.abs(v)))
        names.append(("translation-x", "translation-y", "rotation")[k])
    return names


def describe_free_modes(R: np.ndarray, fixed: np.ndarray) -> str:
    names = free_rigid_modes(R, fixed)
    return ", ".join(names) if names else "none (zero-stiffness region)"


class Factorization:
    """Sparse LU of the free-free block, with iterative refinement on solve."""

    def __init__(self, K: sp.spmatrix, free: np.ndarray, describe=None):
        self.free = free
        self.Kff = K[free][:, free].tocsc()
        self.describe = describe
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                self.lu = spla.splu(self.Kff)
            except (spla.MatrixRankWarning, RuntimeError) as exc:
                raise SingularSystemError(
                    f"stiffness factorization failed; unconstrained mode: {self._mode()}"
                ) from exc

    def _mode(self) -> str:
        return self.describe() if self.describe else "unknown"

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if not np.any(rhs):
            return np.zeros(self.free.size)
        u = self.lu.solve(rhs)
        res = np.inf
        for _ in range(3):
            if not np.all(np.isfinite(u)):
                break
            r = rhs - self.Kff @ u
            res = backward_error(self.Kff, u, rhs, r)
            if res <= RESIDUAL_TOL:
                return u
            u = u + self.lu.solve(r)
        raise SingularSystemError(
            f"residual {res:.2e} exceeds {RESIDUAL_TOL:g}; unconstrained mode: {self._mode()}"
        )


def backward_error(K: sp.spmatrix, u: np.ndarray, f: np.ndarray, r: Optional[np.ndarray] = None) -> float:
    """Normwise backward error ``|f - K u| / (|K| |u| + |f|)`` in the max norm.

    Equals the plain relative residual when ``|K||u|`` is comparable to ``|f|``
    and stays meaningful when near-void pockets carry very large displacements.
    """
    r = f - K @ u if r is None else r
    knorm = spla.norm(K, np.inf)
    denom = knorm * np.abs(u).max(initial=0.0) + np.abs(f).max(initial=0.0)
    return float(np.abs(r).max(initial=0.0) / denom) if denom > 0 else 0.0


def solve_linear(K: sp.spmatrix, f: np.ndarray, free: np.ndarray, *, direct: bool = True,
                 describe=None) -> np.ndarray:
    """Solve ``K[free, free] u = f`` and check the relative residual."""
    if not np.any(f):
        return np.zeros(free.size)
    if direct:
        return Factorization(K, free, describe).solve(f)
    Kff = K[free][:, free].tocsr()
    d = Kff.diagonal()
    if np.any(d <= 0):
        raise SingularSystemError("non-positive stiffness diagonal")
    u, info = spla.cg(Kff, f, M=sp.diags(1.0 / d), rtol=RESIDUAL_TOL * 0.1, atol=0.0,
                      maxiter=20 * free.size)
    res = backward_error(Kff, u, f) if np.all(np.isfinite(u)) else np.inf
    if info != 0 or not np.all(np.isfinite(u)) or res > RESIDUAL_TOL:
        raise SingularSystemError(
            f"CG stopped with relative residual {res:.2e} (info={info}); unconstrained mode: "
            f"{describe() if describe else 'unknown'}"
        )
    return u


def assemble_and_solve(m: QuadModel, K: Optional[sp.spmatrix] = None) -> np.ndarray:
    """Nodal displacement vector solving ``K u = F`` with the model's fixities."""
    K = assemble(m.grid, m.per_element_C) if K is None else K
    n = n_dofs(m.grid)
    u = np.zeros(n)
    if m.prescribed is not None:
        u[m.fixed_dofs] = m.prescribed
    free = np.setdiff1d(np.arange(n), m.fixed_dofs)
    modes = free_rigid_modes(rigid_body_modes(m.grid), m.fixed_dofs)
    if modes:
        raise SingularSystemError(f"unconstrained mode: {', '.join(modes)}")
    rhs = m.loads[free] - (K @ u)[free]
    direct = m.grid.n_elements <= DIRECT_SOLVE_LIMIT
    u[free] = solve_linear(K, rhs, free, direct=direct,
                           describe=lambda: describe_free_modes(rigid_body_modes(m.grid), m.fixed_dofs))
    return u


def element_stresses(m: QuadModel, U: np.ndarray) -> ElementStress:
    B0 = strain_matrix(m.grid.h)
    ue = U[element_dofs(m.grid)]
    strain = ue @ B0.T
    s = np.einsum("eab,eb->ea", m.per_element_C, strain)
    return ElementStress.from_array(s.reshape(m.grid.ny, m.grid.nx, 3))


def principal_angles(sxx, syy, sxy) -> np.ndarray:
    # arctan2(0, 0) == 0 gives the hydrostatic tie-break for free
    return 0.5 * np.arctan2(2.0 * np.asarray(sxy, float), np.asarray(sxx, float) - np.asarray(syy, float))


def principal_directions(s: ElementStress, grid: Optional[GridSpec] = None) -> OrientationField:
    theta = principal_angles(s.sxx, s.syy, s.sxy)
    if grid is None:
        grid = GridSpec(theta.shape[-1], theta.shape[0] if theta.ndim > 1 else 1)
    return OrientationField(grid, theta, encode_angles(theta))
