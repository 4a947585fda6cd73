"""
Exception hierarchy for the flocking simulator
"""
from typing import Any, Optional


class FlocksimError(Exception):
    """Base class for all simulator errors"""


class GridMismatchError(FlocksimError, ValueError):
    """Fields or kernel tables built on different grids were combined"""


class FieldShapeError(FlocksimError, ValueError):
    """Array shape does not match the grid"""


class ZeroShiftError(FlocksimError, ValueError):
    """A finite difference was requested with a zero shift"""


class SingularPointError(FlocksimError, ValueError):
    """The kernel was evaluated at a lattice point (x = 0 mod 2π)"""


class KernelSpecError(FlocksimError, ValueError):
    """Kernel parameters or multiplier table violate their invariants"""


class DecayFitError(FlocksimError, ValueError):
    """A decay fit was requested on unusable data"""


class FieldFormatError(FlocksimError, ValueError):
    """A FLOCKFIELD dump or run directory could not be parsed"""


class NonPositiveMassError(FlocksimError, ValueError):
    """Total mass is zero or negative, so ū = P/M is undefined"""


class ConfigError(FlocksimError, ValueError):
    """Invalid simulation configuration; `line` names the offending line when known"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class QuadratureError(FlocksimError, RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance"""


class KernelCertificationError(FlocksimError, RuntimeError):
    """The grid scan found a kernel value below the far-corner value"""


class NMPCertificateError(FlocksimError, RuntimeError):
    """Every sample of the dissipation certificate was degenerate"""


class NotFlockedError(FlocksimError, RuntimeError):
    """A trajectory did not converge to a flocking state"""


class VerificationFailure(FlocksimError, RuntimeError):
    """One or more self-checks failed"""


class NumericalAbort(FlocksimError, RuntimeError):
    """The time stepper stopped: NaN, positivity loss or similar"""

    def __init__(self, reason: str, last_good: Any = None, trajectory: Any = None):
        self.reason = reason
        self.last_good = last_good
        self.trajectory = trajectory
        super().__init__(reason)
