"""Exception types shared across the package."""


class RabimagError(Exception):
    """Base class for package errors."""


class DomainError(RabimagError, ValueError):
    """An input lies outside the domain of an operation."""


class ConfigError(RabimagError, ValueError):
    """Configuration failed validation. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class FitError(RabimagError, RuntimeError):
    """A curve fit failed; ``omega`` identifies the offending drive when known."""

    def __init__(self, message: str, omega=None):
        super().__init__(message)
        self.omega = omega


class CalibrationError(RabimagError, ValueError):
    pass


class EmptyBandError(RabimagError, ValueError):
    pass


class UndefinedMetricError(RabimagError, ValueError):
    pass


class GridTooCoarseError(RabimagError, ValueError):
    pass


class UnsupportedModeError(RabimagError, NotImplementedError):
    pass
