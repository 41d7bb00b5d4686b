"""Exception types raised across the package."""


class InputError(ValueError):
    """Malformed or inconsistent arguments (shapes, ranges, empty sets)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ResourceError(RuntimeError):
    """A computation would exceed its configured size budget."""


class NumericalError(ArithmeticError):
    """NaN or overflow detected during an iterative update."""
