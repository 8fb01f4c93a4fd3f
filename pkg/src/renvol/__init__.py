"""Numerical renormalized-volume toolkit for Poincare-Einstein ends."""

from .errors import (
    AliasingError,
    ArgumentError,
    ConditioningError,
    ConfigError,
    ConstraintError,
    ConvergenceError,
    DomainError,
    EllipticityError,
    InversionError,
    RenvolError,
    ShapeError,
    SingularityError,
)

__version__ = "0.1.0"
