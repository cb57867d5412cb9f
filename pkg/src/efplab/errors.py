"""Exception types shared across the package."""


class EfpError(Exception):
    """Base class for library errors."""


class DomainError(EfpError, ValueError):
    """A loss or its conjugate was evaluated outside its domain."""


class NumericalError(EfpError, ArithmeticError):
    """A particle coordinate or estimate became non-finite."""


class ConfigError(EfpError, ValueError):
    """Invalid or inconsistent configuration."""


class DegenerateError(EfpError, ValueError):
    """Not enough distinct points for a nearest-neighbour estimate."""
