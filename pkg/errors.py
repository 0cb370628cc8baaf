class RotateError(Exception):
    """Base class for every error raised by the toolkit."""


class InputDomainError(RotateError, ValueError):
    """An operation received an argument outside its domain."""


class SimulationFault(RotateError):
    """The simulator produced or received a non-finite value."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingDivergence(RotateError):
    pass


class ConfigError(RotateError):
    pass


class EnvironmentDoneError(RotateError):
    pass


class CheckpointError(RotateError):
    pass


class GraspBankError(RotateError):
    pass


class OptimizationAbort(RotateError):
    pass
