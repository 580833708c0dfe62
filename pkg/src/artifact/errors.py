"""Exception hierarchy shared by every module."""


class ArtifactError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(ArtifactError, ValueError):
    """An argument violates a documented precondition."""


class MalformedPartitionError(ArtifactError):
    """Partition data is inconsistent (e.g. an interface fails its sphere relation)."""


class EmptyJunctionError(ArtifactError):
    """A requested triple junction has no points in the model space."""


class SamplingError(ArtifactError):
    """Seeded sampling could not find the geometry it was asked for."""


class DegeneracyError(ArtifactError):
    """A transport or construction left the valid parameter domain."""


class InfeasibleError(ArtifactError):
    """An operation needs a feasible flatness certificate and did not get one."""


class ConstraintViolation(ArtifactError):
    """A discrete field does not satisfy its junction constraints."""


class MeshError(ArtifactError):
    """Mesh construction or a mesh-based solve was rejected."""
