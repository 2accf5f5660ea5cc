"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelValidityError(ValueError):
    """The closed-form channel approximation is outside its validity region."""


class NumericalError(ArithmeticError):
    """A quadrature or series failed to converge."""


class AlignmentError(RuntimeError):
    """Too few overlapping detections to align the received sequence."""


class NoDetectionError(RuntimeError):
    """No valid detection is available to estimate the delay."""
