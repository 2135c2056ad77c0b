"""Exception types shared across the package."""


class VmbError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VmbError):
    """A parameter is outside its admissible range or inconsistent."""


class ShapeError(VmbError):
    """Array arguments have incompatible shapes."""


class StateError(VmbError):
    """An operation was called before its prerequisites were computed."""


class DiagnosticError(VmbError):
    """A consistency check between two computation routes failed.

    Carries the measured discrepancy in ``.discrepancy`` when available.
    """

    def __init__(self, message, discrepancy=None):
        super().__init__(message)
        self.discrepancy = discrepancy


class AssemblyInconsistencyError(VmbError):
    """An assembled operator violates a structural property (e.g. a
    negative spectral gap or a nonpositive transport coefficient)."""


class TruncationDiagnosticError(VmbError):
    """A truncation-sensitive check failed; re-run with higher degree."""


class SolvabilityError(VmbError):
    """A Poisson right-hand side has a nonzero mean on the torus."""


class StepSizeError(VmbError):
    """Time step violates the stability bound."""


class DivergenceError(VmbError):
    """NaN or overflow detected during time stepping."""


class InputError(VmbError):
    """Input data violates a compatibility condition."""


class FormatError(VmbError):
    """A binary file failed header or layout validation."""
