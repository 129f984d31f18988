"""Exception hierarchy for the mfdrift package."""


class MfdriftError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MfdriftError):
    """Invalid scenario/config input. Carries the offending field path."""

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(MfdriftError):
    """Input outside the mathematical domain of an operation."""


class DegenerateBandError(MfdriftError):
    """Operation requires a non-degenerate exit-flow band."""


class NoInteriorMaximumError(MfdriftError):
    """Curve has no interior maximum on the requested range."""


class NumericalBlowupError(MfdriftError):
    """Integration produced a non-finite state."""

    def __init__(self, message, step=None, path=None):
        self.step = step
        self.path = path
        super().__init__(message)


class EnsembleError(MfdriftError):
    """One or more paths of an ensemble failed."""

    def __init__(self, message, failed_paths=()):
        self.failed_paths = tuple(failed_paths)
        super().__init__(message)


class StabilityDtError(MfdriftError):
    """Explicit PDE step size violates the stability (CFL) bound."""

    def __init__(self, message, admissible_dt=None):
        self.admissible_dt = admissible_dt
        super().__init__(message)


class SolverError(MfdriftError):
    """A root-finding or optimization routine failed to converge."""


class LikelihoodError(MfdriftError):
    """Likelihood evaluation degenerated (all particle weights zero)."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class CalibrationError(MfdriftError):
    """Calibration could not be started or completed."""


class EmptySampleError(MfdriftError):
    """An analysis window contained no samples."""


class UndefinedStatisticError(MfdriftError):
    """A statistic is undefined for the given samples (e.g. constant data)."""
