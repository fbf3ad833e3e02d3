"""Exception hierarchy shared by every stage of the pipeline."""


class PlannerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PlannerError):
    """Invalid or inconsistent scenario configuration."""


class DependencyError(ConfigError):
    """An upstream artifact is missing or stale."""


class NumericalError(PlannerError):
    """Base class for numerical failures (CLI exit code 3)."""


class EvaluationError(NumericalError):
    pass


class SamplingError(NumericalError):
    pass


class IsolatedStateError(NumericalError):
    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class NonConvergenceError(NumericalError):
    def __init__(self, message, residual=float("nan"), level=None):
        super().__init__(message)
        self.residual = residual
        self.level = level


class DegenerateStateError(NumericalError):
    pass


class UncontrollableError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class LossOfControlError(NumericalError):
    pass
