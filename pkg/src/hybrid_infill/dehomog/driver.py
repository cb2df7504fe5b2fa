"""Coarse hybrid design -> fine binary structure -> boundary contours."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fields import DesignMask, GridSpec, ScalarField, orientation_from_encoded, refine_field
from .contours import ContourSet, extract_boundary
from .morph import BinaryImage, assemble_structure, extract_shell, realize_lattice
from .phase import solve_phase_field, wave_project


@dataclass(frozen=True)
class DehomogResult:
    structure: BinaryImage
    contours: ContourSet
    phase_residual: tuple  # interior max |grad Phi - K| per family


def apply_mask(values: np.ndarray, mask: DesignMask) -> np.ndarray:
    v = np.array(values, float)
    v[mask.void] = 0.0
    v[mask.solid] = 1.0
    return v


def dehomogenize(rho: np.ndarray, xi: np.ndarray, theta_enc: np.ndarray, grid: GridSpec,
                 mask: DesignMask, wave, *, dp_tol: float | None = None,
                 solid_fill: bool = True) -> DehomogResult:
    """Refine the coarse channels by ``wave.lam``, realize the rank-2 lattice,
    add the shell and the solid-filled region, and extract the boundary.

    ``solid_fill=False`` skips the solid region (lattice-and-shell only).
    """
    lam = int(wave.lam)
    rho_f = refine_field(ScalarField(grid, apply_mask(rho, mask)), lam)
    xi_f = refine_field(ScalarField(grid, np.clip(np.asarray(xi, float), 0, 1)), lam)
    if not solid_fill:
        xi_f = xi_f.with_values(np.zeros(xi_f.grid.shape))
    theta_f = refine_field(orientation_from_encoded(grid, theta_enc), lam)

    residual = []
    gammas = []
    for family in (1, 2):
        phi = solve_phase_field(theta_f, family, penalty=wave.penalty)
        residual.append(phi.residual_max)
        gammas.append(wave_project(phi, wave.d))
    lattice = realize_lattice(gammas[0], gammas[1], wave.N_dilate)
    shell = extract_shell(rho_f, wave.t_shell)
    structure = assemble_structure(rho_f, xi_f, shell, lattice)
    tol = wave.dp_tol if dp_tol is None else dp_tol
    contours = extract_boundary(structure, wave.R_f, wave.eta_t, tol, h=rho_f.grid.h)
    return DehomogResult(structure, contours, tuple(residual))
