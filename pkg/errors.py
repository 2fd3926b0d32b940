"""
Error hierarchy for the NL-RLDA library
Each error carries the exit code the CLI reports for it
"""

from typing import Optional


class RLDAError(Exception):
    """Base class for every error raised by this package"""
    exit_code = 1


# --- input problems (exit 2) ---

class InputError(RLDAError):
    exit_code = 2


class EmptyClass(InputError):
    pass


class InsufficientSamples(InputError):
    pass


class NonFinite(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class DomainError(InputError):
    pass


class ConfigError(InputError):
    pass


class DataFormatError(InputError):
    """CSV parse failure with row/column diagnostics"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.line = line
        self.column = column


# --- numerical failures (exit 4) ---

class NumericalError(RLDAError):
    exit_code = 4


class ConvergenceFailure(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message: str, residual: float = float('nan'), iterations: int = 0):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SingularSigma(NumericalError):
    pass


class SingularTarget(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


# --- degenerate classifier conditions (exit 3) ---

class DegenerateError(RLDAError):
    exit_code = 3


class DegenerateD(DegenerateError):
    def __init__(self, message: str, value: float = 0.0):
        super().__init__(message)
        self.value = value


class DegenerateTrace(DegenerateError):
    pass


class DegeneratePrime(DegenerateError):
    pass


class AllZeroSpectrum(DegenerateError):
    pass
