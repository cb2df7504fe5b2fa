"""High-fidelity check: quality six-node triangle mesh and plane-stress solve."""

from .audit import MeshAudit, audit_mesh
from .evaluate import HiFiResult, append_results, evaluate_candidate, write_mesh_csv
from .mesh import SIZING_LEVELS, MeshError, MeshSizing, TriMesh, triangulate_region
from .solver import PlaneStressSolution, edge_loads, solve_plane_stress

__all__ = [
    "HiFiResult", "MeshAudit", "MeshError", "MeshSizing", "PlaneStressSolution", "SIZING_LEVELS",
    "TriMesh", "append_results", "audit_mesh", "edge_loads", "evaluate_candidate",
    "solve_plane_stress", "triangulate_region", "write_mesh_csv",
]
