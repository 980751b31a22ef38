# noqa: I002

__all__ = ["BadParameterError", "MismatchError", "NotFoundError", "NumericError", "WadiError"]


class WadiError(Exception):
    """Base error."""


class NotFoundError(WadiError):
    """Not found error."""


class BadParameterError(WadiError):
    """Bad parameter error."""


class MismatchError(WadiError):
    """Two artifacts that should agree do not."""


class NumericError(WadiError):
    """Non-finite values or divergence."""
