"""Display-to-sensor radiometry: response curve, colour correction, flat fields.

Two pathways are provided.  The general one fits a monotone display response
from gray steps plus a 3x3 colour correction matrix from colour patches.  The
two-point pathway, valid for black/white patterns only, maps a pattern into
normalised sensor units directly from white- and black-field captures, which
also absorbs lens vignetting and display non-uniformity.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import interpolate, ndimage, optimize

from .errors import CalibrationError, ConfigError, FitError
from .image import RawFrame, demosaic_bilinear

log = logging.getLogger(__name__)

LUT_NODES = 1024


class CalibrationWarning(UserWarning):
    pass


@dataclass
class DisplayResponse:
    """Monotone display response LUT plus colour correction matrix.

    ``codes`` are normalised display code values in [0, 1] (code / max) and
    ``response`` the relative sensor response at each node; ``response[0]`` is
    zero by construction.  ``ccm`` maps linear display RGB to sensor RGB.
    """

    codes: np.ndarray
    response: np.ndarray
    ccm: np.ndarray
    max_residual: float = 0.0
    black_offset: float = 0.0

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        self.response = np.asarray(self.response, dtype=np.float64)
        self.ccm = np.asarray(self.ccm, dtype=np.float64).reshape(3, 3)
        if np.any(np.diff(self.response) < 0):
            raise ConfigError("display response must be non-decreasing")

    def curve(self, code):
        """Code value (normalised) -> relative linear response."""
        return np.interp(code, self.codes, self.response)

    def inverse(self, response):
        """Relative response -> normalised code value (monotone table inversion)."""
        resp, idx = np.unique(self.response, return_index=True)
        return np.interp(response, resp, self.codes[idx])

    def to_dict(self) -> dict:
        return {
            "codes": self.codes.tolist(),
            "response": self.response.tolist(),
            "ccm": self.ccm.tolist(),
            "max_residual": self.max_residual,
            "black_offset": self.black_offset,
        }

    @classmethod
    def from_dict(cls, d) -> "DisplayResponse":
        return cls(d["codes"], d["response"], d["ccm"], d.get("max_residual", 0.0), d.get("black_offset", 0.0))

    @classmethod
    def identity(cls, nodes: int = LUT_NODES) -> "DisplayResponse":
        c = np.linspace(0.0, 1.0, nodes)
        return cls(c, c.copy(), np.eye(3))


def fit_display_curve(displayed_levels, measured, max_code: float | None = None,
                      nodes: int = LUT_NODES, ccm=None) -> DisplayResponse:
    """Fit a monotone response to gray-step measurements.

    Isotonic regression removes non-monotone noise, a smoothing spline (GCV
    penalty) regularises the result, and a running maximum keeps the sampled
    LUT monotone.  Measurements should already be black-level corrected.
    """
    levels = np.asarray(displayed_levels, dtype=np.float64)
    meas = np.asarray(measured, dtype=np.float64)
    if levels.shape != meas.shape or levels.ndim != 1:
        raise ConfigError("displayed_levels and measured must be 1-D and equally long")
    if len(levels) < 8:
        raise FitError(f"need at least 8 gray steps, got {len(levels)}")
    order = np.argsort(levels)
    levels, meas = levels[order], meas[order]
    max_code = float(levels.max() if max_code is None else max_code)
    codes = levels / max_code

    iso = optimize.isotonic_regression(meas).x
    departure = np.max(np.abs(iso - meas))
    noise = np.median(np.abs(np.diff(meas, 2))) / np.sqrt(6) if len(meas) > 3 else 0.0
    if departure > 3 * max(noise, 1e-12) and departure > 1e-9:
        warnings.warn(f"gray-step response is non-monotone beyond noise (max departure {departure:.3g}); "
                      "projected onto a monotone curve", CalibrationWarning, stacklevel=2)

    if np.ptp(iso) == 0:
        raise FitError("flat gray-step response")
    spline = interpolate.make_smoothing_spline(codes, iso)
    grid = np.linspace(0.0, 1.0, nodes)
    resp = np.maximum.accumulate(spline(grid))
    black = float(resp[0])
    resp = resp - black
    fitted = np.interp(codes, grid, resp) + black
    return DisplayResponse(grid, resp, np.eye(3) if ccm is None else ccm,
                           max_residual=float(np.max(np.abs(fitted - meas))), black_offset=black)


@dataclass
class CcmFit:
    matrix: np.ndarray
    condition_number: float
    rms_residual: float


def fit_ccm(display_linear_colors, sensor_colors) -> CcmFit:
    """Least-squares ``C`` minimising ``sum ||C d - s||^2`` (no row-sum constraint)."""
    d = np.asarray(display_linear_colors, dtype=np.float64).reshape(-1, 3)
    s = np.asarray(sensor_colors, dtype=np.float64).reshape(-1, 3)
    if len(d) != len(s):
        raise ConfigError("colour lists differ in length")
    if len(d) < 3 or np.linalg.matrix_rank(d, tol=1e-10 * max(1.0, np.abs(d).max())) < 3:
        raise FitError("colour palette is rank deficient; need 3 linearly independent colours")
    ct, *_ = np.linalg.lstsq(d, s, rcond=None)
    C = ct.T
    resid = d @ ct - s
    return CcmFit(C, float(np.linalg.cond(d)), float(np.sqrt(np.mean(resid ** 2))))


def linearize(x, resp: DisplayResponse, max_value: float = 1.0) -> np.ndarray:
    """Map displayed code values into linear sensor RGB, clipped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    lin = resp.curve(x / max_value)
    if lin.ndim == 2:
        lin = np.repeat(lin[..., None], 3, axis=2)
    out = lin @ resp.ccm.T
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def two_point_terms(y_white, y_black, black_level=0.0, white_level=1.0, max_value=1.0):
    """Per-pixel ``(gain, offset)`` so that the two-point model is ``gain * x + offset``."""
    y1 = np.asarray(y_white, dtype=np.float64)
    y2 = np.asarray(y_black, dtype=np.float64)
    if y1.shape != y2.shape:
        raise ConfigError("white and black fields differ in shape")
    if not black_level < white_level:
        raise ConfigError("black level must be below white level")
    if np.any(y1 <= y2):
        raise CalibrationError("white field is not brighter than black field everywhere (inverted fields?)")
    span = white_level - black_level
    return (y1 - y2) / (max_value * span), (y2 - black_level) / span


def two_point_linearize(x, y_white, y_black, black_level=0.0, white_level=1.0, max_value=1.0) -> np.ndarray:
    """Linearised, vignetted HR target from a binary pattern and flat fields.

    ``x`` is (H, W) or (H, W, 3) display values in [0, max_value]; the fields
    are (H, W, 3) captures already resampled onto the same grid.
    """
    gain, offset = two_point_terms(y_white, y_black, black_level, white_level, max_value)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and gain.ndim == 3:
        x = x[..., None]
    return gain * x + offset


def global_two_point(x, white_mean, black_mean, black_level=0.0, white_level=1.0, max_value=1.0):
    """Spatially uniform two-point normalisation from mean field levels."""
    return ((np.asarray(x, dtype=np.float64) * (white_mean - black_mean) / max_value + black_mean - black_level)
            / (white_level - black_level))


def field_to_hr_grid(field: RawFrame | np.ndarray, scale: int, out_shape: tuple[int, int],
                     origin: float = 0.0, cfa=None) -> np.ndarray:
    """Demosaic an LR flat-field capture and resample it onto an HR grid.

    HR pixel ``p`` corresponds to LR coordinate ``(p - origin) / scale``;
    ``origin`` is the HR index of LR pixel 0 (kernel margin plus phase).
    Returns an (H, W, 3) float64 array; samples beyond the capture are clamped
    to the nearest edge.
    """
    if isinstance(field, RawFrame):
        rgb = demosaic_bilinear(field)
    else:
        arr = np.asarray(field)
        rgb = arr if arr.ndim == 3 else demosaic_bilinear(arr, cfa)
    rgb = rgb.astype(np.float64)
    h, w = out_shape
    rr = (np.arange(h) - origin) / scale
    cc = (np.arange(w) - origin) / scale
    R, C = np.meshgrid(rr, cc, indexing="ij")
    return np.stack([ndimage.map_coordinates(rgb[..., c], [R, C], order=1, mode="nearest") for c in range(3)],
                    axis=-1)
