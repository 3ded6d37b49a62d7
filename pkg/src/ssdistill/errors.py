"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ShapeError(ContractError):
    """Operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """Non-finite values or a failed factorization."""


class ConfigurationError(ValueError):
    """A configuration cannot be satisfied (e.g. the storage budget is too small)."""


class BudgetError(ConfigurationError):
    """An artifact exceeds its storage budget."""


class CorruptionError(IOError):
    """A serialized container failed validation."""
