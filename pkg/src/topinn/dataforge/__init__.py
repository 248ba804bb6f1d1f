"""Ground-truth side of the benchmark: geometry, forward solvers, case files."""

from .shapes import ShapeSpec, shape_sdf
from .fem import FemMesh, build_mesh, fem_solve_linear, extract_measurements
from .thermal import thermal_solve
from .cases import case_catalog, build_case, generate_case

__all__ = [
    "ShapeSpec",
    "shape_sdf",
    "FemMesh",
    "build_mesh",
    "fem_solve_linear",
    "extract_measurements",
    "thermal_solve",
    "case_catalog",
    "build_case",
    "generate_case",
]
