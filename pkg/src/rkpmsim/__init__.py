"""Mesh-free reduced-order hyperelastic simulation with RKPM skinning eigenmodes."""

from .basis import BasisTable, build_basis_table, shape_gradients, shape_values
from .config import SceneConfig, load_scene
from .elasticity import LameParams, energy_density, hessian_wrt_F, pk1_stress
from .errors import RkpmError
from .modes import SkinningModes, assemble_mass_matrix, assemble_weight_hessian, solve_modes
from .sampling import IntegrationSet, KernelSet, build_kernels, sample_grid
from .simulate import Scene, Simulator, build_kinematics, full_kinematics
from .trajectory import Trajectory, compare, read_trajectory, write_trajectory

__version__ = "0.1.0"

__all__ = [
    "BasisTable",
    "IntegrationSet",
    "KernelSet",
    "LameParams",
    "RkpmError",
    "Scene",
    "SceneConfig",
    "Simulator",
    "SkinningModes",
    "Trajectory",
    "assemble_mass_matrix",
    "assemble_weight_hessian",
    "build_basis_table",
    "build_kernels",
    "build_kinematics",
    "compare",
    "energy_density",
    "full_kinematics",
    "hessian_wrt_F",
    "load_scene",
    "pk1_stress",
    "read_trajectory",
    "sample_grid",
    "shape_gradients",
    "shape_values",
    "solve_modes",
    "write_trajectory",
]
