"""Phase-field integration of an orientation field and the wave projection.

The phase ``Phi`` lives on the nodes of the fine grid and is measured in fine
pixels, so stripe periods are independent of the physical element size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order

from ..fields import GridSpec, OrientationField, ScalarField

PENALTY = 10.0
RESIDUAL_TOL = 1e-8


class PhaseFieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseField:
    grid: GridSpec  # element grid; values sit on its (ny+1, nx+1) nodes
    values: np.ndarray
    residual_max: float = 0.0  # interior max |grad Phi - K|
    residual_rms: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (self.grid.ny + 1, self.grid.nx + 1):
            raise ValueError("phase values must be nodal, shape (ny+1, nx+1)")
        if not np.all(np.isfinite(v)):
            raise ValueError("phase values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def target_vectors(theta: np.ndarray, family: int) -> tuple[np.ndarray, np.ndarray]:
    """Stripe-normal field K and its in-stripe partner K* for one family."""
    c, s = np.cos(theta), np.sin(theta)
    if family == 1:
        K = np.stack([-s, c], axis=-1)
    elif family == 2:
        K = np.stack([-c, -s], axis=-1)
    else:
        raise ValueError("family must be 1 or 2")
    Kstar = np.stack([K[..., 1], -K[..., 0]], axis=-1)
    return K, Kstar


def _grid_graph(ny: int, nx: int) -> sp.csr_matrix:
    idx = np.arange(ny * nx).reshape(ny, nx)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    n = ny * nx
    g = sp.coo_matrix((np.ones(a.size), (a, b)), shape=(n, n))
    return (g + g.T).tocsr()


def repair_signs(K: np.ndarray) -> np.ndarray:
    """Flip vectors so breadth-first neighbours never point against each other.

    Each element is compared with the element it was reached from, so the
    result is consistent along the BFS tree rooted at element 0.
    """
    ny, nx = K.shape[:2]
    flat = K.reshape(-1, 2).copy()
    order, pred = breadth_first_order(_grid_graph(ny, nx), 0, directed=False)
    sign = np.ones(flat.shape[0])
    dots = np.einsum("ij,ij->i", flat[order[1:]], flat[pred[order[1:]]])
    flip = np.where(dots < 0, -1.0, 1.0)
    for e, p, f in zip(order[1:].tolist(), pred[order[1:]].tolist(), flip.tolist()):
        sign[e] = sign[p] * f
    return (flat * sign[:, None]).reshape(K.shape)


def gradient_operators(nx: int, ny: int):
    """Sparse d/dx, d/dy at the 2x2 Gauss points of unit bilinear elements.

    Rows are ordered element-major, Gauss point minor.
    """
    g = 1.0 / np.sqrt(3.0)
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    nodes = np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)
    N = n0.size
    dx = np.empty((N, 4, 4))
    dy = np.empty((N, 4, 4))
    for q, (xi, eta) in enumerate(((-g, -g), (g, -g), (g, g), (-g, g))):
        # unit element: d/dx = 2 d/dxi
        dx[:, q, :] = 0.5 * corners[:, 0] * (1 + corners[:, 1] * eta)
        dy[:, q, :] = 0.5 * corners[:, 1] * (1 + corners[:, 0] * xi)
    rows = np.repeat(np.arange(4 * N), 4)
    cols = np.repeat(nodes, 4, axis=0).ravel()
    shape = (4 * N, (nx + 1) * (ny + 1))
    Gx = sp.csr_matrix((dx.ravel(), (rows, cols)), shape=shape)
    Gy = sp.csr_matrix((dy.ravel(), (rows, cols)), shape=shape)
    return Gx, Gy


def solve_phase_field(theta_f: OrientationField, family: int = 1, penalty: float = PENALTY,
                      repair: bool = True) -> PhaseField:
    """Least-squares phase whose gradient follows the stripe normal of ``theta_f``.

    Minimizes ``sum |grad Phi - K|^2 + penalty * sum (grad Phi . K*)^2`` over
    all Gauss points, with ``Phi`` pinned to zero at node 0.
    """
    grid = theta_f.grid
    nx, ny = grid.nx, grid.ny
    theta = np.asarray(theta_f.angles, float)
    K, _ = target_vectors(theta, 1)
    if repair:
        K = repair_signs(K)
    if family == 2:
        K = np.stack([-K[..., 1], K[..., 0]], axis=-1)
    elif family != 1:
        raise ValueError("family must be 1 or 2")
    Ks = np.stack([K[..., 1], -K[..., 0]], axis=-1)

    Gx, Gy = gradient_operators(nx, ny)
    kx = np.repeat(K[..., 0].ravel(), 4)
    ky = np.repeat(K[..., 1].ravel(), 4)
    sx = np.repeat(Ks[..., 0].ravel(), 4)
    sy = np.repeat(Ks[..., 1].ravel(), 4)
    D11 = sp.diags(1.0 + penalty * sx * sx)
    D22 = sp.diags(1.0 + penalty * sy * sy)
    D12 = sp.diags(penalty * sx * sy)
    A = (Gx.T @ D11 @ Gx + Gy.T @ D22 @ Gy + Gx.T @ D12 @ Gy + Gy.T @ D12 @ Gx).tocsc()
    # M K = K because K is orthogonal to K*
    b = Gx.T @ kx + Gy.T @ ky

    Aff = A[1:, 1:]
    phi = np.zeros(A.shape[0])
    try:
        phi[1:] = spla.splu(Aff).solve(b[1:])
    except RuntimeError as exc:
        raise PhaseFieldError(f"phase-field factorization failed: {exc}") from exc
    res = np.linalg.norm(Aff @ phi[1:] - b[1:]) / max(np.linalg.norm(b[1:]), 1e-300)
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise PhaseFieldError(f"phase-field relative residual {res:.2e} exceeds {RESIDUAL_TOL:g}")

    values = phi.reshape(ny + 1, nx + 1)
    gx = 0.5 * (values[:-1, 1:] + values[1:, 1:] - values[:-1, :-1] - values[1:, :-1])
    gy = 0.5 * (values[1:, :-1] + values[1:, 1:] - values[:-1, :-1] - values[:-1, 1:])
    err = np.hypot(gx - K[..., 0], gy - K[..., 1])
    inner = err[1:-1, 1:-1] if min(nx, ny) > 2 else err
    return PhaseField(grid, values, float(inner.max()), float(np.sqrt(np.mean(inner ** 2))))


def element_phase(phi: PhaseField) -> np.ndarray:
    """Node-averaged phase per element."""
    v = phi.values
    return 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])


def wave_project(phi: PhaseField, d: float) -> ScalarField:
    """Stripe intensity ``1/2 + 1/2 cos(pi Phi / d)`` per fine element."""
    if d < 2:
        raise ValueError("period factor d must be >= 2")
    gamma = 0.5 + 0.5 * np.cos((np.pi / d) * element_phase(phi))
    return ScalarField(phi.grid, np.clip(gamma, 0.0, 1.0))
