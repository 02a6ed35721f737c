"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class DataError(ValueError):
    """Input data violates a precondition (bad labels, empty splits)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
