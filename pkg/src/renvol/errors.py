"""Exception hierarchy shared by every module."""


class RenvolError(Exception):
    """Base class; carries an optional machine-readable payload."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class DomainError(RenvolError, ValueError):
    pass


class AliasingError(RenvolError):
    pass


class ShapeError(RenvolError, ValueError):
    pass


class SingularityError(RenvolError, ArithmeticError):
    pass


class InversionError(SingularityError):
    pass


class ConstraintError(RenvolError, ValueError):
    pass


class ConvergenceError(RenvolError):
    pass


class EllipticityError(ConvergenceError):
    pass


class ConditioningError(RenvolError):
    pass


class ConfigError(RenvolError, ValueError):
    pass


class ArgumentError(RenvolError, ValueError):
    pass
