"""Biomechanical surface registration driven by nodal forces, without boundary conditions."""

__version__ = "0.1.0"

from .errors import ForceRegError, InputError, NumericalError
from .fem import ElasticMaterial, assemble, build_system
from .geometry import PointCloud, RigidTransform, VolumeMesh, load_point_cloud, load_volume_mesh
from .registration import RegistrationConfig, RegistrationResult, register

__all__ = [
    "ElasticMaterial",
    "ForceRegError",
    "InputError",
    "NumericalError",
    "PointCloud",
    "RegistrationConfig",
    "RegistrationResult",
    "RigidTransform",
    "VolumeMesh",
    "assemble",
    "build_system",
    "load_point_cloud",
    "load_volume_mesh",
    "register",
]
