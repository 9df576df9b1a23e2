"""Exception types shared across the solver."""


class AxiflowError(Exception):
    """Base class for all solver errors."""


class DegenerateSegmentError(AxiflowError):
    """A generating-curve segment has zero length."""


class MeshGenerationError(AxiflowError):
    """The fitted mesh generator could not meet its quality contract."""


class FieldTransferError(AxiflowError):
    """Point location failed while interpolating between meshes."""


class TimeStepError(AxiflowError):
    """The time step is too large for the current mesh motion."""


class PicardError(AxiflowError):
    """The Picard iteration did not converge within the iteration cap."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SolverError(AxiflowError):
    """A linear solve failed or did not reach the residual target."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history


class ConfigError(AxiflowError):
    """A run configuration failed validation."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)
