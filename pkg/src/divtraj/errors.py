"""Exception types shared across the package."""


class DivtrajError(Exception):
    """Base class for all package errors."""


class ShapeError(DivtrajError, ValueError):
    """Operand shapes do not conform to an operation's contract."""


class NumericalError(DivtrajError, ArithmeticError):
    """A numerical failure: NaN/Inf values, singular or ill-conditioned matrices."""


class GeometryError(DivtrajError, ValueError):
    """Invalid scene geometry (self-intersecting road, empty drivable set, ...)."""


class ConfigError(DivtrajError, ValueError):
    """Invalid or inconsistent configuration."""
