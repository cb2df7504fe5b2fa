"""Two-phase material model: isotropic solid and orthotropic porous infill.

Matrices use Voigt order (xx, yy, xy) with engineering shear strain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaterialParams:
    E_iso: float = 1.0
    nu_iso: float = 0.3
    sigma_S: float = 2.0
    E11: float = 0.3
    E22: float = 0.3
    G12: float = 0.2
    nu12: float = 0.24
    sigma_X: float = 1.0
    sigma_Y: float = 1.0
    sigma_XY: float = 0.5

    def __post_init__(self):
        positive = ("E_iso", "sigma_S", "E11", "E22", "G12", "sigma_X", "sigma_Y", "sigma_XY")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 1.0 - self.nu12 * self.nu21 > 0:
            raise ValueError("orthotropic constants violate 1 - nu12*nu21 > 0")

    @property
    def nu21(self) -> float:
        return self.nu12 * self.E22 / self.E11

    def C_iso(self) -> np.ndarray:
        E, nu = self.E_iso, self.nu_iso
        return E / (1 - nu * nu) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])

    def C_aniso_local(self) -> np.ndarray:
        d = 1.0 - self.nu12 * self.nu21
        return np.array([
            [self.E11 / d, self.nu12 * self.E22 / d, 0.0],
            [self.nu12 * self.E22 / d, self.E22 / d, 0.0],
            [0.0, 0.0, self.G12],
        ])


def rotation_matrix(theta) -> np.ndarray:
    """Stress transformation global -> local, ``(..., 3, 3)`` for array ``theta``."""
    theta = np.asarray(theta, float)
    c, s = np.cos(theta), np.sin(theta)
    T = np.empty(theta.shape + (3, 3))
    T[..., 0, 0] = c * c
    T[..., 0, 1] = s * s
    T[..., 0, 2] = 2 * s * c
    T[..., 1, 0] = s * s
    T[..., 1, 1] = c * c
    T[..., 1, 2] = -2 * s * c
    T[..., 2, 0] = -s * c
    T[..., 2, 1] = s * c
    T[..., 2, 2] = c * c - s * s
    return T


def C_aniso_global(mat: MaterialParams, theta) -> np.ndarray:
    """Orthotropic stiffness rotated into global axes: T^-1 C0 T^-T."""
    Tinv = np.linalg.inv(rotation_matrix(theta))
    return Tinv @ mat.C_aniso_local() @ np.swapaxes(Tinv, -1, -2)


def stiffness_factors(rho_bar, xi_bar, p_rho: float, p_xi: float, eps: float):
    """Scalar weights (a, b_iso, b_aniso) with C = a * (b_iso C_iso + b_aniso C_aniso)."""
    rho_bar = np.asarray(rho_bar, float)
    xi_bar = np.asarray(xi_bar, float)
    a = eps + (1.0 - eps) * rho_bar ** p_rho
    return a, xi_bar ** p_xi, (1.0 - xi_bar) ** p_xi


def stiffness_factor_derivatives(rho_bar, xi_bar, p_rho: float, p_xi: float, eps: float):
    """Derivatives (da/drho, db_iso/dxi, db_aniso/dxi)."""
    rho_bar = np.asarray(rho_bar, float)
    xi_bar = np.asarray(xi_bar, float)
    da = (1.0 - eps) * p_rho * rho_bar ** (p_rho - 1)
    return da, p_xi * xi_bar ** (p_xi - 1), -p_xi * (1.0 - xi_bar) ** (p_xi - 1)


def interpolate_stiffness(rho_bar, xi_bar, theta, mat: MaterialParams, p_rho: float = 3.0,
                          p_xi: float = 3.0, eps: float = 1e-9) -> np.ndarray:
    """Extended-SIMP constitutive matrix; vectorized over array inputs."""
    a, b_iso, b_an = stiffness_factors(rho_bar, xi_bar, p_rho, p_xi, eps)
    C_an = C_aniso_global(mat, theta)
    mix = b_iso[..., None, None] * mat.C_iso() + b_an[..., None, None] * C_an
    return a[..., None, None] * mix


# --------------------------------------------------------------------------
# stress criteria, all normalized by the relevant yield strengths

def von_mises_index(s: np.ndarray, mat: MaterialParams) -> np.ndarray:
    sxx, syy, sxy = s[..., 0], s[..., 1], s[..., 2]
    return (sxx * sxx + syy * syy - sxx * syy + 3.0 * sxy * sxy) / mat.sigma_S ** 2


def von_mises_index_grad(s: np.ndarray, mat: MaterialParams) -> np.ndarray:
    sxx, syy, sxy = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([2 * sxx - syy, 2 * syy - sxx, 6.0 * sxy], axis=-1) / mat.sigma_S ** 2


def local_stress(s: np.ndarray, theta) -> np.ndarray:
    return np.einsum("...ij,...j->...i", rotation_matrix(theta), s)


def tsai_hill_index(s: np.ndarray, theta, mat: MaterialParams) -> np.ndarray:
    loc = local_stress(s, theta)
    s1, s2, s12 = loc[..., 0], loc[..., 1], loc[..., 2]
    X, Y, S = mat.sigma_X, mat.sigma_Y, mat.sigma_XY
    return (s1 / X) ** 2 + (s2 / Y) ** 2 - s1 * s2 / (X * Y) + (s12 / S) ** 2


def tsai_hill_index_grad(s: np.ndarray, theta, mat: MaterialParams) -> np.ndarray:
    T = rotation_matrix(theta)
    loc = np.einsum("...ij,...j->...i", T, s)
    s1, s2, s12 = loc[..., 0], loc[..., 1], loc[..., 2]
    X, Y, S = mat.sigma_X, mat.sigma_Y, mat.sigma_XY
    g_loc = np.stack([2 * s1 / X ** 2 - s2 / (X * Y), 2 * s2 / Y ** 2 - s1 / (X * Y), 2 * s12 / S ** 2], axis=-1)
    return np.einsum("...ji,...j->...i", T, g_loc)


def stress_state(s: np.ndarray, theta, xi_bar, mat: MaterialParams, p_xi: float = 3.0) -> np.ndarray:
    """Interpolated yield index blending von Mises (solid) and Tsai-Hill (porous)."""
    s = np.asarray(s, float)
    xi_bar = np.asarray(xi_bar, float)
    return xi_bar ** p_xi * von_mises_index(s, mat) + (1.0 - xi_bar) ** p_xi * tsai_hill_index(s, theta, mat)
