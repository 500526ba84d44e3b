"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: validation problems exit 1, fatal
convergence failures exit 2, file/format problems exit 3.
"""


class ShbError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ShbError):
    """Inputs violate a documented precondition or invariant."""


class ConvergenceError(ShbError):
    """An iterative fit failed in a way that leaves no usable result."""


class DataFormatError(ShbError):
    """An input file does not match its documented schema."""
