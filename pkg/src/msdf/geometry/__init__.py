"""Mesh handling, exact signed distance oracle, and sampling utilities."""

from .kernels import max_min_chebyshev, min_chebyshev_excess, set_thread_cap
from .mesh import MeshError, TriangleMesh, load_mesh, load_obj, load_ply, load_stl, normalize_to_unit_cube, save_obj
from .oracle import SdfOracle
from .sampling import SurfaceSamples, farthest_point_sample, sample_near_surface, sample_surface

__all__ = [
    "MeshError",
    "TriangleMesh",
    "SdfOracle",
    "SurfaceSamples",
    "load_mesh",
    "load_obj",
    "load_ply",
    "load_stl",
    "save_obj",
    "normalize_to_unit_cube",
    "sample_surface",
    "sample_near_surface",
    "farthest_point_sample",
    "min_chebyshev_excess",
    "max_min_chebyshev",
    "set_thread_cap",
]
