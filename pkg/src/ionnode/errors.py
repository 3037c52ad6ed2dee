"""Exception types raised across the package.

Each carries a short machine-readable ``code`` that the CLI reports in its
error JSON.
"""


class IonNodeError(Exception):
    code = "error"


class SolverError(IonNodeError):
    """Equilibrium or eigen solver did not converge."""

    code = "solver-failure"


class UnstableConfigurationError(IonNodeError):
    """Linear crystal is past the zigzag threshold."""

    code = "linear-configuration-unstable"


class ConvergenceError(IonNodeError):
    """A numerical integration or truncated series did not converge."""

    code = "convergence"


class FitError(IonNodeError):
    code = "fit-failure"


class CalibrationError(IonNodeError):
    code = "invalid-calibration"


class DataError(IonNodeError):
    """Incomplete, degenerate or inconsistent measurement data."""

    code = "data"


class ConfigError(IonNodeError):
    code = "validation"


class SamplingError(ConfigError):
    """Time step too coarse for the requested filter or oscillator."""

    code = "sampling"


class DomainError(DataError):
    code = "domain"


class IncompleteDataError(DataError):
    code = "incomplete-data"


class DegenerateDataError(DataError):
    code = "degenerate"


class OptimizationError(IonNodeError):
    code = "optimization"


class JoinError(DataError):
    """Click log and ion outcomes do not share attempt indexing."""

    code = "join-failure"
