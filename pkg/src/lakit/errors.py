class LakitError(Exception):
    """Base exception for lakit."""

    pass


class ConfigError(LakitError):
    """Raised when there is an issue with the problem configuration."""

    pass


class MeshError(LakitError):
    """Raised when a mesh is malformed, non-conforming, or cannot be read."""

    pass


class ConeError(LakitError):
    """Raised when a cone or conic descriptor is used with inconsistent dimensions."""

    pass


class CriterionError(LakitError):
    """Raised for unsupported strength criteria or invalid criterion parameters."""

    pass


class SpaceError(LakitError):
    """Raised when a function space or operator is requested in an unsupported way."""

    pass


class FormulationError(LakitError):
    """Raised when a limit-analysis program cannot be built from its inputs."""

    pass


class SolverError(LakitError):
    """Raised when the conic solver receives an invalid problem."""

    pass


class ExportError(LakitError):
    """Raised when results cannot be written."""

    pass
