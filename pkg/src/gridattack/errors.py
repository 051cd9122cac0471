"""Exception and warning types raised across the package."""


class GridAttackError(Exception):
    """Base class for all package errors."""


class GridValidationError(GridAttackError, ValueError):
    """A topology or meter description violates its invariants."""


class UnobservableSystemError(GridAttackError):
    """rank(H) < n, equivalently the measurement graph is disconnected."""


class InsufficientRedundancyWarning(UserWarning):
    """m <= n: estimation works but bad-data detection is disabled."""


class MatpowerParseError(GridAttackError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DetectionUnavailableError(GridAttackError):
    """No redundancy left (dof <= 0), so no chi-square test exists."""


class IdentificationFailedError(GridAttackError):
    """No removal set of size <= k_max restores a passing residual.

    ``best`` holds the candidate with the smallest post-removal residual
    ratio J/lambda seen during the search (or None).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CriticalMeasurementsError(GridAttackError):
    """Every measurement is critical; any removal breaks observability."""


class OracleUnavailableError(GridAttackError):
    """The instance is too large for exhaustive cut enumeration."""


class DisconnectedGraphError(GridAttackError):
    pass


class RelaxationUnsolvedError(GridAttackError):
    """The SDP relaxation could not be solved to tolerance.

    This is never a proof that the relaxation is infeasible.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ObservabilityViolatedError(GridAttackError):
    """No attack subset of the cut keeps the graph connected after bait removal."""
