"""De-homogenization: orientation and density fields to explicit 2-D geometry."""

from .contours import ContourSet, extract_boundary
from .driver import DehomogResult, dehomogenize
from .export import export_geometry, read_dxf
from .morph import BinaryImage, assemble_structure, extract_shell, realize_lattice, zhang_suen_thin
from .phase import PhaseField, solve_phase_field, wave_project

__all__ = [
    "BinaryImage", "ContourSet", "DehomogResult", "PhaseField", "assemble_structure", "dehomogenize", "export_geometry",
    "extract_boundary", "extract_shell", "read_dxf", "realize_lattice", "solve_phase_field",
    "wave_project", "zhang_suen_thin",
]
