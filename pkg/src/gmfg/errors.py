"""Exception hierarchy; the CLI maps each class to an exit code."""


class GmfgError(Exception):
    exit_code = 3


class ValidationError(GmfgError, ValueError):
    """Bad input: malformed config, asymmetric matrix, grid mismatch."""

    exit_code = 1


class DomainError(ValidationError):
    """Coordinate outside [0, 1]."""


class AssumptionViolated(GmfgError):
    """A solvability assumption fails, e.g. a mode Riccati equation escapes."""

    exit_code = 2

    def __init__(self, message, mode=None, time=None):
        super().__init__(message)
        self.mode = mode
        self.time = time


class NumericalError(GmfgError):
    """Non-finite values during integration or simulation."""

    exit_code = 3
