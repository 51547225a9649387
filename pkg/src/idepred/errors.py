"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration or parameters violating a stated constraint."""


class ShapeError(ValueError):
    """Array argument with the wrong number of samples or wrong dimension."""


class RangeError(IndexError):
    """History lookup outside the span covered by the buffer."""


class NumericError(ArithmeticError):
    """Non-finite value produced during integration or evaluation."""


class SingularityError(NumericError):
    """Division by a vanishing Lyapunov gradient in the observer correction term."""


class DomainError(ValueError):
    """Rejection sampling produced no admissible point for a set."""
