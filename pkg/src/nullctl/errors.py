"""Exception types shared by all modules."""

from __future__ import annotations


class NullCtlError(Exception):
    """Base class for library errors."""


class InputError(NullCtlError, ValueError):
    """Malformed or non-finite input data."""


class DomainError(NullCtlError, ValueError):
    """An operation was called outside its mathematical domain."""


class PrecisionEscalation(NullCtlError):
    """The requested computation needs more mantissa bits than available.

    Parameters
    ----------
    required_bits : int
        Estimate of the working precision that would succeed.
    message : str
        Human readable reason.
    """

    def __init__(self, required_bits: int, message: str = ""):
        self.required_bits = int(required_bits)
        text = message or "precision budget exceeded"
        b = self.required_bits
        shown = str(b) if b < 10**12 else f"~2^{b.bit_length() - 1}"
        super().__init__(f"{text} (rerun with at least {shown} bits)")


class NormalizationError(NullCtlError, ZeroDivisionError):
    """Boundary observation vanished, so the eigenfunction cannot be normalized."""

    def __init__(self, eigenvalue, message: str = ""):
        self.eigenvalue = eigenvalue
        text = message or "zero boundary observation"
        super().__init__(f"{text} at eigenvalue {eigenvalue}")


class ControllabilityError(NullCtlError):
    """Approximate controllability fails (a coupling integral vanishes)."""

    def __init__(self, zeta, message: str = ""):
        self.zeta = zeta
        text = message or "coupling integral vanishes"
        super().__init__(f"{text} at zeta = {zeta}")


class AssemblyError(NullCtlError):
    """Control assembly refused because some atoms were rejected."""

    def __init__(self, groups, diagnostics=None):
        self.groups = list(groups)
        self.diagnostics = diagnostics or {}
        super().__init__(f"rejected atoms for groups {self.groups}")


class ConvergenceError(NullCtlError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, residuals=None):
        self.residuals = list(residuals or [])
        super().__init__(message)
