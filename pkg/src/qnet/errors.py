"""Exception types shared across the package."""


class QnetError(Exception):
    """Base class; ``kind`` is the machine-readable tag the CLI reports."""

    kind = "error"


class InvalidArgument(QnetError, ValueError):
    kind = "invalid-argument"


class UndefinedCorrelation(QnetError, ValueError):
    kind = "undefined-correlation"


class NumericError(QnetError, ArithmeticError):
    kind = "numeric-error"


class QuadratureError(NumericError):
    kind = "quadrature-error"


class IntegrationError(NumericError):
    kind = "integration-error"


class ConsistencyError(NumericError):
    kind = "consistency-error"


class ConfigError(QnetError, ValueError):
    kind = "parse-error"
