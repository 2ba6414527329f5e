"""Exception types shared across the toolkit.

Everything raised on purpose derives from GzslError so callers can catch
one base class at the CLI boundary and map it to an exit code.
"""


class GzslError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GzslError):
    """A matrix or vector has the wrong rank, size, or dtype."""


class StateError(GzslError):
    """An operation was called in an invalid order (e.g. backward before forward)."""


class NumericsError(GzslError):
    """A non-finite value appeared where finite values are required."""


class DomainError(GzslError):
    """An argument is outside the domain the operation is defined on."""


class MagicMismatch(GzslError):
    """A binary file does not start with the expected magic bytes or version."""


class SplitViolation(GzslError):
    """Seen/unseen class discipline was broken (label or descriptor on the wrong side)."""


class SamplerError(GzslError):
    """A usable mini-batch could not be drawn from the training data."""


class HashMismatch(GzslError):
    """Stored checkpoint hash does not match the recomputed one."""
