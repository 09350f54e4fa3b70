"""Device-specific degradation calibration and RAW unprocessing toolkit."""

__version__ = "0.1.0"
