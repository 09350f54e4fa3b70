"""Dense display-to-sensor correspondences from captured Gray-code stripes."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from ..image import RawFrame
from ..patterns import gray_code_bits, gray_decode
from .homography import CorrespondenceSet


def _plane(img) -> np.ndarray:
    if isinstance(img, RawFrame):
        img = img.data if img.is_normalized else (img.data.astype(np.float64) - img.black_level) / (
            img.white_level - img.black_level)
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=2)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D capture, got shape {a.shape}")
    return a


def _decode_axis(frames, thr, inverse):
    """Decode one axis; returns the integer code and per-pixel bit margin."""
    bits = np.zeros(thr.shape, dtype=np.int64)
    margin = np.full(thr.shape, np.inf)
    step = 2 if inverse else 1
    for k in range(0, len(frames), step):
        a = frames[k]
        ref = frames[k + 1] if inverse else thr
        bit = a > ref
        bits = (bits << 1) | bit
        margin = np.minimum(margin, np.abs(a - ref))
    return gray_decode(bits), margin


def decode_gray_code(captures, white_field, black_field, display_width: int, display_height: int,
                     min_contrast: float = 0.05, inverse: bool = False) -> CorrespondenceSet:
    """Per-pixel decode of column then row Gray-code captures.

    ``captures`` holds the x-axis sequence (MSB first) followed by the y-axis
    sequence, as produced by :func:`rawforge.patterns.gen_gray_code`.  Each bit
    is thresholded at the midpoint of the white and black field captures, or
    against its complement frame when ``inverse`` is set.  Pixels whose
    white/black contrast is below ``min_contrast`` or whose code falls outside
    the display are omitted.  ``confidence`` is the smallest bit margin
    relative to half the local contrast.
    """
    nx, ny = gray_code_bits(display_width), gray_code_bits(display_height)
    per = 2 if inverse else 1
    if len(captures) != per * (nx + ny):
        raise ConfigError(f"expected {per * (nx + ny)} captures for a {display_width}x{display_height} display, "
                          f"got {len(captures)}")
    white, black = _plane(white_field), _plane(black_field)
    frames = [_plane(c) for c in captures]
    shapes = {f.shape for f in frames} | {white.shape, black.shape}
    if len(shapes) != 1:
        raise DimensionError(f"capture sizes differ: {sorted(shapes)}")
    thr = 0.5 * (white + black)
    contrast = white - black
    col, m_x = _decode_axis(frames[:per * nx], thr, inverse)
    row, m_y = _decode_axis(frames[per * nx:], thr, inverse)
    ok = (contrast > min_contrast) & (col < display_width) & (row < display_height)
    rr, cc = np.nonzero(ok)
    half = 0.5 * contrast[ok]
    conf = np.minimum(m_x[ok], m_y[ok]) / half
    return CorrespondenceSet(np.c_[cc, rr].astype(np.float64), np.c_[col[ok], row[ok]].astype(np.float64),
                             np.clip(conf, 0.0, 1.0))
