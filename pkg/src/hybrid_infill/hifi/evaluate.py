"""High-fidelity evaluation of one candidate geometry: mass and peak stress."""
from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from .. import fea_quad as fq
from ..dehomog.contours import ContourSet
from .mesh import MeshError, MeshSizing, TriMesh, triangulate_region
from .solver import PlaneStressSolution, edge_loads, element_components, solve_plane_stress

RESULT_FIELDS = ("candidate_id", "G_vf", "G_opt", "anomaly", "reason", "mesh_elements",
                 "max_displacement", "wall_time")


@dataclass(frozen=True)
class HiFiResult:
    G_vf: float  # material area / design-domain area
    G_opt: float  # peak nodal von Mises stress away from load and support singularities
    max_displacement: float
    n_elements: int
    n_nodes: int
    anomaly: bool = False
    reason: str = ""
    wall_time: float = 0.0
    candidate_id: str = ""
    removed_elements: int = 0  # floating islands dropped before the solve

    def row(self) -> dict:
        d = asdict(self)
        d["mesh_elements"] = d.pop("n_elements")
        return {k: d[k] for k in RESULT_FIELDS}


def anomaly(reason: str, **kw) -> HiFiResult:
    base = dict(G_vf=np.nan, G_opt=np.nan, max_displacement=np.nan, n_elements=0, n_nodes=0)
    base.update(kw)
    return HiFiResult(anomaly=True, reason=reason, **base)


def case_sizing(case, sizing: Union[None, str, MeshSizing] = None) -> MeshSizing:
    if isinstance(sizing, MeshSizing):
        return sizing
    cap = max(case.grid.width, case.grid.height)
    return MeshSizing.preset(sizing or case.sizing, case.sizing_scale, cap=cap)


# --------------------------------------------------------------------------
# boundary conditions on the triangle mesh

def _tol(mesh: TriMesh) -> float:
    return 1e-6 * float(np.ptp(mesh.nodes, axis=0).max())


def boundary_nodes(mesh: TriMesh) -> np.ndarray:
    return np.unique(mesh.boundary_edges)


def support_dofs(mesh: TriMesh, supports) -> np.ndarray:
    """Dofs of boundary nodes inside each support box."""
    nodes = boundary_nodes(mesh)
    x, y = mesh.nodes[nodes].T
    tol = _tol(mesh)
    out = [np.zeros(0, int)]
    for s in supports:
        x0, y0, x1, y1 = s.box
        sel = nodes[(x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)]
        out += [2 * sel + d for d in s.dofs]
    return np.unique(np.concatenate(out))


def _point_edge_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300), 0, 1)
    return np.linalg.norm(a + t[:, None] * ab - p, axis=1)


def point_load_vector(mesh: TriMesh, loads, radius: float):
    """Spread each point force as a uniform traction over the boundary edges within
    ``radius`` of the point. Returns the load vector and, per load, whether it landed."""
    f = np.zeros(2 * mesh.n_nodes)
    be = mesh.boundary_edges
    a, b = mesh.nodes[be[:, 0]], mesh.nodes[be[:, 1]]
    landed = []
    for ld in loads:
        d = _point_edge_distance(np.asarray(ld.point, float)[None], a, b)
        sel = d <= radius
        landed.append(bool(sel.any()))
        if not sel.any():
            continue
        length = np.linalg.norm(b[sel] - a[sel], axis=1).sum()
        f += edge_loads(mesh, be[sel], np.asarray(ld.force, float) / length)
    return f, landed


def junction_points(mesh: TriMesh, fixed: np.ndarray) -> np.ndarray:
    """Fully clamped boundary nodes next to an unconstrained boundary node (clamp ends)."""
    n_fixed = np.zeros(mesh.n_nodes, int)
    np.add.at(n_fixed, fixed // 2, 1)
    be = mesh.boundary_edges
    chain = np.vstack([be[:, [0, 2]], be[:, [2, 1]]])
    ends = []
    for u, v in (chain.T, chain[:, ::-1].T):
        sel = (n_fixed[u] == 2) & (n_fixed[v] == 0)
        ends.append(u[sel])
    return mesh.nodes[np.unique(np.concatenate(ends))]


def submesh(mesh: TriMesh, keep: np.ndarray) -> TriMesh:
    """Mesh restricted to the kept elements, nodes renumbered in their original order."""
    el = mesh.elements[keep]
    used = np.zeros(mesh.n_nodes, bool)
    used[el] = True
    remap = np.cumsum(used) - 1
    be_keep = np.all(used[mesh.boundary_edges], axis=1)
    return TriMesh(mesh.nodes[used], remap[el], remap[mesh.boundary_edges[be_keep]],
                   mesh.boundary_tags[be_keep], int(used[:mesh.n_corner].sum()))


# --------------------------------------------------------------------------
# output

def write_mesh_csv(mesh: TriMesh, directory: str, prefix: str = "mesh") -> tuple:
    os.makedirs(directory, exist_ok=True)
    pn = os.path.join(directory, f"{prefix}_nodes.csv")
    pe = os.path.join(directory, f"{prefix}_elements.csv")
    with open(pn, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        w.writerows([k, repr(float(x)), repr(float(y))] for k, (x, y) in enumerate(mesh.nodes))
    with open(pe, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "n0", "n1", "n2", "n3", "n4", "n5"])
        w.writerows([k, *map(int, e)] for k, e in enumerate(mesh.elements))
    return pn, pe


def append_results(path: str, results) -> None:
    """Append result rows, writing the header when the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        if new:
            w.writeheader()
        for r in results:
            w.writerow(r.row())


# --------------------------------------------------------------------------

def evaluate_candidate(geometry: Optional[ContourSet], case, sizing: Union[None, str, MeshSizing] = None, *,
                       candidate_id: str = "", dump_dir: Optional[str] = None,
                       return_solution: bool = False):
    """Mesh, solve and measure one geometry; failures become anomaly results."""
    t0 = time.perf_counter()

    def done(res: HiFiResult, sol=None, mesh=None):
        from dataclasses import replace
        res = replace(res, wall_time=time.perf_counter() - t0, candidate_id=str(candidate_id))
        return (res, sol, mesh) if return_solution else res

    if geometry is None or len(geometry) == 0:
        return done(anomaly("no mesh: empty geometry"))
    s = case_sizing(case, sizing)
    try:
        mesh = triangulate_region(geometry, s)
    except MeshError as exc:
        msg = str(exc)
        return done(anomaly(msg if msg.startswith("no mesh") else f"no mesh: {msg}"))
    if dump_dir is not None:
        write_mesh_csv(mesh, dump_dir, f"{candidate_id or 'candidate'}")
    stats = dict(n_elements=mesh.n_elements, n_nodes=mesh.n_nodes)
    G_vf = mesh.area() / case.domain_area

    fixed = support_dofs(mesh, case.supports)
    f, landed = point_load_vector(mesh, case.loads, case.load_radius)
    if not all(landed):
        return done(anomaly("load point not on the geometry", G_vf=G_vf, **stats))

    # keep components that carry supports or loads; loaded but unsupported parts are fatal
    ncomp, label = element_components(mesh)
    node_fixed = np.zeros(mesh.n_nodes, bool)
    node_fixed[fixed // 2] = True
    node_loaded = np.abs(f.reshape(-1, 2)).sum(axis=1) > 0
    keep = np.zeros(mesh.n_elements, bool)
    for k in range(ncomp):
        nodes = mesh.elements[label == k].ravel()
        sup, lod = node_fixed[nodes].any(), node_loaded[nodes].any()
        if lod and not sup:
            return done(anomaly("load disconnected from supports", G_vf=G_vf, **stats))
        keep[label == k] = sup
    removed = int((~keep).sum())
    if removed:
        used = np.zeros(mesh.n_nodes, bool)
        used[mesh.elements[keep]] = True
        mesh = submesh(mesh, keep)
        fixed = support_dofs(mesh, case.supports)
        f = f.reshape(-1, 2)[used].ravel()

    try:
        sol: PlaneStressSolution = solve_plane_stress(mesh, case.mat.C_iso(), fixed, f)
    except fq.SingularSystemError as exc:
        return done(anomaly(f"singular system: {exc}", G_vf=G_vf, removed_elements=removed, **stats))

    vm = sol.von_mises
    excl = np.zeros(mesh.n_nodes, bool)
    r = case.exclusion_radius
    for p in [np.asarray(ld.point, float) for ld in case.loads] + list(junction_points(mesh, fixed)):
        excl |= np.linalg.norm(mesh.nodes - p, axis=1) < r
    G_opt = float(vm[~excl].max()) if (~excl).any() else float(vm.max())
    umax = sol.max_displacement
    if not (np.isfinite(G_opt) and np.isfinite(umax) and np.isfinite(G_vf)):
        return done(anomaly("non-finite response", G_vf=G_vf, removed_elements=removed, **stats))
    res = HiFiResult(G_vf, G_opt, umax, removed_elements=removed, **stats)
    return done(res, sol, mesh)
