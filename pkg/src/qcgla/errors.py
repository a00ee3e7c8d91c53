class QcglaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(QcglaError, ValueError):
    pass


class ShapeError(QcglaError, ValueError):
    pass


class Overflow24(QcglaError, ArithmeticError):
    """A 24-bit lane addition left the signed 24-bit range."""


class InvalidOperand(QcglaError, ValueError):
    pass


class ConfigError(QcglaError, ValueError):
    pass
