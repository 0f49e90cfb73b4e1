"""Exception types shared across the package."""


class SpinKernelError(Exception):
    """Base class for all package-specific failures."""


class StateValidationError(SpinKernelError, ValueError):
    """A density matrix violated Hermiticity, trace or positivity limits."""


class NumericalCorruptionError(SpinKernelError, RuntimeError):
    """A quantity that must be real carried an imaginary residue above limits."""


class IntegrationError(SpinKernelError, RuntimeError):
    """Master-equation integration drifted outside physical tolerances.

    Carries the time at which the violation was detected.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class IdxFormatError(SpinKernelError, ValueError):
    """An IDX file failed to parse.  Carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class DegenerateDataError(SpinKernelError, ValueError):
    """A dataset or kernel is degenerate (zero variance, empty, all-zero)."""
