"""Anisotropic odeco frame fields on tetrahedral meshes."""

from . import algebra, kernels
from .energy import EnergyBreakdown, FrameField, Objective, VertexClass, make_frames, realize
from .errors import InputError, MeshError, OdecoError, SolverError, ValidationError
from .export import CurveSet, FieldArchive, export_glyphs, trace_integral_curves
from .guidance import ConstraintSet, build_problem, curvature_guidance, field_guidance, parse_guidance
from .io import load_tet_mesh, read_vtk, write_vtk
from .mesh import TetMesh
from .solver import SolverConfig, SolverReport, optimize, smooth_field
from .surface import analyze_boundary

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet", "CurveSet", "EnergyBreakdown", "FieldArchive", "FrameField", "InputError", "MeshError",
    "Objective", "OdecoError", "SolverConfig", "SolverError", "SolverReport", "TetMesh", "ValidationError",
    "VertexClass", "algebra", "analyze_boundary", "build_problem", "curvature_guidance", "export_glyphs",
    "field_guidance", "kernels", "load_tet_mesh", "make_frames", "optimize", "parse_guidance", "read_vtk",
    "realize", "smooth_field", "trace_integral_curves", "write_vtk",
]
