"""Exception types raised across the package."""


class EvoliftError(Exception):
    """Base class for all package errors."""


class ShapeError(EvoliftError, ValueError):
    """Operand extents are incompatible."""


class ContractError(EvoliftError, ValueError):
    """A documented precondition was violated."""


class NumericError(EvoliftError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DegenerateDepthError(EvoliftError, ValueError):
    """A point sits at or behind the camera plane."""


class CapacityError(EvoliftError, ValueError):
    """Input exceeds a fixed table size."""


class ValidationError(EvoliftError, ValueError):
    """Input data fails a structural check (e.g. non-orthonormal rotation)."""


class DatasetParseError(EvoliftError, ValueError):
    """A dataset line could not be parsed."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(EvoliftError, ValueError):
    """Invalid or inconsistent configuration."""
