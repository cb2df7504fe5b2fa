"""Plane-stress linear elasticity on six-node triangles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .. import fea_quad as fq
from .mesh import TriMesh

# degree-2 rule on the reference triangle (area 1/2)
QUAD_POINTS = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
QUAD_WEIGHTS = np.full(3, 1 / 6)
# natural coordinates of the six nodes
NODE_POINTS = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0.5], [0, 0.5], [0.5, 0]], float)


def shape_functions(xi: float, eta: float) -> np.ndarray:
    L1, L2, L3 = 1 - xi - eta, xi, eta
    return np.array([L1 * (2 * L1 - 1), L2 * (2 * L2 - 1), L3 * (2 * L3 - 1),
                     4 * L2 * L3, 4 * L3 * L1, 4 * L1 * L2])


def shape_gradients(xi: float, eta: float) -> np.ndarray:
    """(2, 6): derivatives with respect to xi and eta."""
    L1, L2, L3 = 1 - xi - eta, xi, eta
    return np.array([
        [1 - 4 * L1, 4 * L2 - 1, 0.0, 4 * L3, -4 * L3, 4 * (L1 - L2)],
        [1 - 4 * L1, 0.0, 4 * L3 - 1, 4 * L2, 4 * (L1 - L3), -4 * L2],
    ])


def strain_matrices(nodes: np.ndarray, elements: np.ndarray, xi: float, eta: float):
    """B (m, 3, 12) with dofs ordered (x0, y0, x1, y1, ...) and det J (m,)."""
    dN = shape_gradients(xi, eta)
    X = nodes[elements]  # (m, 6, 2)
    J = np.einsum("ak,mkb->mab", dN, X)  # rows d/dxi, d/deta; cols x, y
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    dNdx = np.einsum("mab,bk->mak", inv, dN)  # (m, 2, 6)
    B = np.zeros((len(elements), 3, 12))
    B[:, 0, 0::2] = dNdx[:, 0]
    B[:, 1, 1::2] = dNdx[:, 1]
    B[:, 2, 0::2] = dNdx[:, 1]
    B[:, 2, 1::2] = dNdx[:, 0]
    return B, det


def element_dofs(elements: np.ndarray) -> np.ndarray:
    return np.stack([2 * elements, 2 * elements + 1], axis=2).reshape(len(elements), 12)


def assemble(mesh: TriMesh, C: np.ndarray) -> sp.csr_matrix:
    Ke = np.zeros((mesh.n_elements, 12, 12))
    for (xi, eta), w in zip(QUAD_POINTS, QUAD_WEIGHTS):
        B, det = strain_matrices(mesh.nodes, mesh.elements, xi, eta)
        if np.any(det <= 0):
            raise ValueError("mesh has non-positive Jacobian")
        Ke += np.einsum("mai,ab,mbj->mij", B, C, B) * (w * det)[:, None, None]
    dofs = element_dofs(mesh.elements)
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return 0.5 * (K + K.T)


def edge_loads(mesh: TriMesh, edges: np.ndarray, traction) -> np.ndarray:
    """Consistent nodal forces of a traction (force per length) on edges ``(a, b, mid)``."""
    f = np.zeros(2 * mesh.n_nodes)
    edges = np.asarray(edges, int).reshape(-1, 3)
    t = np.broadcast_to(np.asarray(traction, float), (len(edges), 2))
    L = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    for k, w in enumerate((1 / 6, 1 / 6, 2 / 3)):
        for d in (0, 1):
            np.add.at(f, 2 * edges[:, k] + d, w * L * t[:, d])
    return f


def element_components(mesh: TriMesh):
    """Connected components of elements sharing a node: (count, label per element)."""
    m = mesh.n_elements
    el = mesh.elements[:, :3]
    rows = np.repeat(np.arange(m), 3)
    inc = sp.coo_matrix((np.ones(3 * m), (rows, el.ravel())), shape=(m, mesh.n_nodes)).tocsr()
    return connected_components(inc @ inc.T, directed=False)


def von_mises(stress: np.ndarray) -> np.ndarray:
    sxx, syy, sxy = stress[..., 0], stress[..., 1], stress[..., 2]
    return np.sqrt(np.maximum(sxx * sxx - sxx * syy + syy * syy + 3 * sxy * sxy, 0.0))


@dataclass(frozen=True)
class PlaneStressSolution:
    u: np.ndarray  # (n, 2)
    stress: np.ndarray  # (n, 3) recovered nodal stress
    von_mises: np.ndarray  # (n,)
    element_stress: np.ndarray  # (m, 6, 3) element stress at its own nodes

    @property
    def max_displacement(self) -> float:
        return float(np.linalg.norm(self.u, axis=1).max(initial=0.0))


def recover_nodal_stress(mesh: TriMesh, C: np.ndarray, u: np.ndarray):
    """Element stresses at their nodes, averaged to nodes with element-area weights."""
    ue = u.reshape(-1)[element_dofs(mesh.elements)]
    el_stress = np.empty((mesh.n_elements, 6, 3))
    for k, (xi, eta) in enumerate(NODE_POINTS):
        B, _ = strain_matrices(mesh.nodes, mesh.elements, xi, eta)
        el_stress[:, k] = np.einsum("ab,mbj,mj->ma", C, B, ue)
    area = mesh.areas()
    acc = np.zeros((mesh.n_nodes, 3))
    wsum = np.zeros(mesh.n_nodes)
    np.add.at(acc, mesh.elements.ravel(), (el_stress * area[:, None, None]).reshape(-1, 3))
    np.add.at(wsum, mesh.elements.ravel(), np.repeat(area, 6))
    nodal = acc / np.where(wsum > 0, wsum, 1.0)[:, None]
    return nodal, el_stress


def check_constraints(mesh: TriMesh, fixed: np.ndarray) -> None:
    """Raise if any connected part of the mesh keeps a rigid-body mode."""
    if fixed.size == 0:
        raise fq.SingularSystemError("no fixed boundary; unconstrained mode: translation-x, translation-y, rotation")
    ncomp, label = element_components(mesh)
    is_fixed = np.zeros(2 * mesh.n_nodes, bool)
    is_fixed[fixed] = True
    for k in range(ncomp):
        nodes = np.unique(mesh.elements[label == k])
        R = fq.rigid_modes_from_coords(mesh.nodes[nodes])
        local = np.flatnonzero(is_fixed[np.stack([2 * nodes, 2 * nodes + 1], 1).ravel()])
        modes = fq.free_rigid_modes(R, local)
        if modes:
            raise fq.SingularSystemError(
                f"unconstrained mode: {', '.join(modes)} (mesh component {k}, {int((label == k).sum())} elements)"
            )


def solve_plane_stress(mesh: TriMesh, C: np.ndarray, fixed_dofs, loads: np.ndarray,
                       prescribed: Optional[np.ndarray] = None) -> PlaneStressSolution:
    """Solve ``K u = f`` with the given fixed dofs; ``C`` is the 3x3 plane-stress matrix."""
    n = 2 * mesh.n_nodes
    fixed = np.unique(np.asarray(fixed_dofs, int))
    check_constraints(mesh, fixed)
    K = assemble(mesh, C)
    u = np.zeros(n)
    if prescribed is not None:
        u[fixed] = prescribed
    free = np.setdiff1d(np.arange(n), fixed)
    rhs = np.asarray(loads, float)[free] - (K @ u)[free]
    u[free] = fq.solve_linear(K, rhs, free, direct=True)
    U = u.reshape(-1, 2)
    nodal, el_stress = recover_nodal_stress(mesh, C, U)
    return PlaneStressSolution(U, nodal, von_mises(nodal), el_stress)
