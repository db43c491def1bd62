"""Exception types raised across the package."""


class VMDetectError(Exception):
    """Base class for all package errors."""


class ShapeError(VMDetectError, ValueError):
    """Input dimensions do not match the network or another operand."""


class TrainingDivergenceError(VMDetectError, FloatingPointError):
    """Training produced a non-finite loss."""


class SolverError(VMDetectError, RuntimeError):
    """A root bracket could not be established."""


class NonConvergenceError(VMDetectError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class DegenerateLayerError(VMDetectError, ValueError):
    """A sampling unit saw an all-zero activation vector."""


class NumericError(VMDetectError, FloatingPointError):
    """A NaN or infinity appeared during a forward pass or gradient step."""

    def __init__(self, message, layer=None, input_id=None):
        super().__init__(message)
        self.layer = layer
        self.input_id = input_id


class DataFormatError(VMDetectError, ValueError):
    """A dataset or serialized artifact is malformed."""


class ConfigError(VMDetectError, ValueError):
    """A configuration file or value is invalid."""
