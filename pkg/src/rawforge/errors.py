"""Exception hierarchy shared by all rawforge modules."""


class RawforgeError(Exception):
    """Base class for every error raised by rawforge."""


class ConfigError(RawforgeError, ValueError):
    """Invalid configuration, arguments or metadata."""


class DimensionError(RawforgeError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class FitError(RawforgeError):
    """A regression or geometric fit is degenerate or unidentifiable."""


class CalibrationError(RawforgeError):
    """Calibration captures are inconsistent (e.g. inverted white/black fields)."""


class GeometryError(RawforgeError):
    """A region of interest or mapping falls outside the valid image area."""


class OptimizationError(RawforgeError):
    """Iterative optimisation diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MeasurementError(RawforgeError):
    """Not enough valid data to produce a measurement."""


class RangeError(RawforgeError, ValueError):
    """A query lies outside the calibrated range."""
