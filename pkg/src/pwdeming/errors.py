"""Exception hierarchy shared across the package."""


class PWDError(Exception):
    """Base class for all package errors."""


class DataError(PWDError, ValueError):
    """Input data violate a precondition (size, finiteness, rank)."""


class ProfileError(PWDError, ValueError):
    """Invalid precision-profile construction or evaluation."""


class DegenerateFitError(PWDError, ArithmeticError):
    """The fit is numerically degenerate (zero slope, zero variance, ...)."""


class ConvergenceError(PWDError, RuntimeError):
    """An iterative fit stopped before meeting its tolerance.

    ``last`` carries the final iterate (a fit object) and ``trace`` any
    per-iteration history the fitter kept.
    """

    def __init__(self, message, last=None, trace=None):
        super().__init__(message)
        self.last = last
        self.trace = trace


class InferenceError(PWDError, RuntimeError):
    """A jackknife refit or prediction failed; ``index`` names the sample."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class OutlierError(PWDError, RuntimeError):
    """A refit inside the outlier procedure failed; ``stages`` is the trace so far."""

    def __init__(self, message, stages=None):
        super().__init__(message)
        self.stages = stages or []


class SimulationError(PWDError, RuntimeError):
    """Too many replicates of a simulation study failed for an estimator."""


class ConfigError(PWDError, ValueError):
    """A simulation config or report does not match its schema; ``fields`` lists the offenders."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = fields or []
