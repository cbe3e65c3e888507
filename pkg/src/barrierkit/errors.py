"""Exception hierarchy shared by all barrierkit modules."""

from __future__ import annotations


class BarrierKitError(Exception):
    """Base class for every error raised by barrierkit."""


class DimensionError(BarrierKitError, ValueError):
    """An argument has the wrong shape for the system it is used with."""


class NumericError(BarrierKitError, ArithmeticError):
    """A computation produced a non-finite value or hit a domain error."""


class ContractError(BarrierKitError, ValueError):
    """A documented precondition of an operation does not hold."""


class RangeError(BarrierKitError, ValueError):
    """A query lies outside the span of the data it is asked about."""


class ParseError(BarrierKitError, ValueError):
    """Syntax or symbol error in a DSL expression.

    ``offset`` is the byte offset into the source text where the problem was
    detected.
    """

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at offset {offset})")


class ConfigError(BarrierKitError, ValueError):
    """Schema error in a system configuration document."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        prefix = f"{key_path}: " if key_path else ""
        super().__init__(prefix + message)


class DivergenceError(BarrierKitError, RuntimeError):
    """The integrator exceeded its step budget; ``partial`` holds what was computed."""

    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)


class SingularFaceError(BarrierKitError, ValueError):
    """The gradient of a constraint face vanishes where a projection was attempted."""

    def __init__(self, message: str, point=None):
        self.point = point
        super().__init__(message)
