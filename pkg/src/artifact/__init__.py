"""Spherical Voronoi partitions of model spaces: Mobius transport, flatness
certificates, conformally flattening potentials and discrete index forms."""

from .errors import (ArtifactError, ConstraintViolation, ContractError, DegeneracyError,
                     EmptyJunctionError, InfeasibleError, MalformedPartitionError, MeshError,
                     SamplingError)
from .geometry import FDConfig, GeneralizedSphere, Space, inner
from .partitions import PartitionSpec, make_partition, standard_flat_partition
from .mobius import MobiusMap, Rotate, StereoAffine, mobius_apply, pullback_partition
from .flatness import FlatnessCertificate, PotentialSpec, build_potential, solve_flatness

__version__ = "0.1.0"

__all__ = [
    "ArtifactError", "ConstraintViolation", "ContractError", "DegeneracyError", "EmptyJunctionError",
    "InfeasibleError", "MalformedPartitionError", "MeshError", "SamplingError",
    "FDConfig", "GeneralizedSphere", "Space", "inner",
    "PartitionSpec", "make_partition", "standard_flat_partition",
    "MobiusMap", "Rotate", "StereoAffine", "mobius_apply", "pullback_partition",
    "FlatnessCertificate", "PotentialSpec", "build_potential", "solve_flatness",
]
