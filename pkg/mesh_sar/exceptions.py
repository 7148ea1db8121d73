class MeshSarError(Exception):
    """Base class for errors raised by mesh_sar."""

    exit_code = 1


class ValidationError(MeshSarError):
    """Invalid input data, arguments or configuration."""

    exit_code = 2


class MissingPrerequisiteError(MeshSarError):
    """A required artifact is missing or was produced under another config."""

    exit_code = 3


class NumericalError(MeshSarError):
    """A computation produced NaN/Inf values."""

    exit_code = 4
