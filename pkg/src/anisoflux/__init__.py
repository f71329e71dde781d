"""Finite-element solvers and benchmarks for anisotropic heat conduction
in magnetized plasmas: primal CG, mixed CG, and an SUPG-stabilized mixed
CG discretization, integrated with an implicit midpoint rule."""

__version__ = "0.1.0"

from .fespace import Field, build_space, gauss_quadrature, interpolate, l2_relative_error
from .kernels import active_backend
from .mesh import build_annulus_mesh, build_rect_mesh, cell_geometry, cell_length_scale

__all__ = [
    "__version__",
    "active_backend",
    "build_annulus_mesh",
    "build_rect_mesh",
    "build_space",
    "cell_geometry",
    "cell_length_scale",
    "Field",
    "gauss_quadrature",
    "interpolate",
    "l2_relative_error",
]
