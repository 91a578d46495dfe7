"""Least-squares quasiconformal maps on planar triangle meshes."""
from .errors import QcmapError
from .lsqc import assemble, solve, solve_mapping
from .mesh_core import TriMesh, load_mesh

__version__ = "0.1.0"

__all__ = ["QcmapError", "TriMesh", "assemble", "load_mesh", "solve", "solve_mapping", "__version__"]
