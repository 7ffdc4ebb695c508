"""Crouzeix-Raviart discretization of incompressible flow with a hybrid
(face-unknown) elimination of the velocity-pressure saddle point."""
from .mesh import MeshError, SimplicialMesh, build_unit_cube_mesh, build_unit_square_mesh, read_mesh, write_mesh

__version__ = "0.1.0"

__all__ = [
    "MeshError", "SimplicialMesh", "build_unit_cube_mesh", "build_unit_square_mesh",
    "read_mesh", "write_mesh", "__version__",
]
