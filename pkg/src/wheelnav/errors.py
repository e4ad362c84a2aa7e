"""Exception hierarchy shared across the library."""

from __future__ import annotations


class WheelNavError(Exception):
    """Base class for all library errors."""


class InvalidInputError(WheelNavError, ValueError):
    """A value fed to a pure computation is non-finite or out of range."""


class CalibrationError(WheelNavError, ValueError):
    """Calibration constant is unusable (r must be finite and positive)."""


class WindowSizeError(WheelNavError, ValueError):
    """A sample window does not match the expected 10 Hz layout."""


class DataIntegrityError(WheelNavError, ValueError):
    """Input data violates ordering, grid, schema or unit expectations."""


class DisplacementBoundError(DataIntegrityError):
    """A one-second displacement exceeds the configured speed sanity bound."""


class ConvergenceError(WheelNavError, ArithmeticError):
    """Geodesic iteration failed to converge; per-second vehicle fixes can
    never be near-antipodal, so this signals corrupt coordinates."""


class DivergenceError(WheelNavError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")


class MissingNormalizerError(WheelNavError, ValueError):
    """Prediction requested from a model without fitted normalizer params."""
