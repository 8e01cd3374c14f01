"""Exception hierarchy shared across the toolkit."""


class SmartError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidMotionError(SmartError, ValueError):
    pass


class UnsupportedOrderError(SmartError, ValueError):
    pass


class MotionParseError(SmartError, ValueError):
    """Malformed motion interchange file; ``frame`` names the offending frame when known."""

    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class SkeletonError(SmartError, ValueError):
    pass


class ConfigError(SmartError, ValueError):
    pass


class GraphError(SmartError, ValueError):
    """Shape mismatch or misuse of the autodiff tape."""


class DomainError(SmartError, ValueError):
    pass


class ContractError(SmartError, ValueError):
    pass


class OptimizerError(SmartError, FloatingPointError):
    pass


class TrainingError(SmartError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class AttackAbortedError(SmartError, RuntimeError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class CheckpointError(SmartError, ValueError):
    pass


class ModelInputError(SmartError, ValueError):
    pass
