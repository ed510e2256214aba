"""
Exception hierarchy for the NCN toolkit.

Library code raises these; only the command-line entry point turns them into
exit codes (1 config/usage, 2 data, 3 numeric).
"""


class NCNError(Exception):
    """Base class for every error raised by the toolkit"""
    exit_code = 1


class ConfigError(NCNError):
    """Raised when a configuration value or command-line usage is invalid"""
    exit_code = 1


class DataError(NCNError):
    """Raised when input data is missing, unparsable or inconsistent"""
    exit_code = 2


class GraphValidationError(DataError):
    """Raised when a graph violates its structural invariants"""
    pass


class DatasetFormatError(DataError):
    """Raised when a dataset file cannot be parsed"""
    pass


class GridFormatError(DataError):
    """Raised when a grid tensor file is corrupt or of an unknown version"""
    pass


class GridMismatchError(DataError):
    """Raised when a grid tensor does not match the graph or run it is used with"""
    pass


class CheckpointError(DataError):
    """Raised when a parameter checkpoint is malformed or does not fit the model"""
    pass


class ArtifactLockError(DataError):
    """Raised when unable to acquire the lock of an output artifact"""
    pass


class NumericError(NCNError):
    """Raised when a non-finite value reaches features, activations or gradients"""
    exit_code = 3


class ShapeError(NCNError, ValueError):
    """Raised when tensor shapes are incompatible with an operation"""
    exit_code = 3
