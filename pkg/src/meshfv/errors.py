"""Exception hierarchy. The CLI maps each class to an exit code."""


class MeshFVError(Exception):
    exit_code = 1


class ValidationError(MeshFVError, ValueError):
    """Bad input: shapes, labels, configuration values."""

    exit_code = 1


class DimensionError(ValidationError):
    pass


class NumericalError(MeshFVError, ArithmeticError):
    """A solver or estimator produced an unusable result."""

    exit_code = 2


class ArtifactError(MeshFVError, OSError):
    """Missing, unreadable or inconsistent files on disk."""

    exit_code = 3
