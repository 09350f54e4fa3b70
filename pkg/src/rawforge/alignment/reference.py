"""Ground-truth alignment for paired evaluation, and histogram matching."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import stats

from ..errors import GeometryError
from ..image import CameraProfile, RawFrame, check_rgb, demosaic_bilinear, normalize_raw
from ..radiometric import DisplayResponse, linearize
from .homography import Homography
from .warp import warp


def histogram_match(src, ref) -> np.ndarray:
    """Monotone remap of ``src`` so its empirical CDF follows ``ref``.

    Each source pixel's average rank is converted to a quantile in [0, 1] and
    looked up in ``ref`` with linear interpolation, so equal values map to
    equal outputs and a constant source lands on the reference median.
    """
    src = np.asarray(src, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if src.size == 0 or ref.size == 0:
        raise ValueError("histogram_match needs non-empty inputs")
    if src.size == 1:
        q = np.full(1, 0.5)
    else:
        q = (stats.rankdata(src.ravel(), method="average") - 1.0) / (src.size - 1)
    return np.quantile(ref, q).reshape(src.shape)


@dataclass
class AlignedPair:
    gt: np.ndarray
    roi: np.ndarray
    mask: np.ndarray
    roi_box: tuple[int, int, int, int]


def align_reference(gt_rgb, capture: RawFrame, profile: CameraProfile, h: Homography, scale: int,
                    roi=None, response: DisplayResponse | None = None, match_histogram: bool = True) -> AlignedPair:
    """Bring a ground-truth image onto the HR grid of a capture ROI.

    ``roi`` is ``(x, y, width, height)`` in capture pixels (whole frame by
    default).  The GT is linearised (when ``response`` is given), both images
    receive the capture's white-balance gains, the GT is bicubically resized
    to exactly ``scale`` times the ROI, histogram matched per channel to the
    demosaicked ROI and finally warped by ``h``, which maps resized-GT pixels
    onto the HR ROI grid.  No optical-flow refinement is applied.
    """
    gt = check_rgb(gt_rgb).astype(np.float64)
    if response is not None:
        gt = linearize(gt, response).astype(np.float64)
    cap = capture if capture.is_normalized else normalize_raw(capture)
    x, y, w, hgt = roi if roi is not None else (0, 0, cap.width, cap.height)
    if x < 0 or y < 0 or w <= 0 or hgt <= 0 or x + w > cap.width or y + hgt > cap.height:
        raise GeometryError(f"ROI {(x, y, w, hgt)} lies outside the {cap.width}x{cap.height} capture")
    gains = np.asarray(cap.wb_gains if cap.wb_gains else profile.wb_gains, dtype=np.float64)
    rgb = demosaic_bilinear(cap).astype(np.float64) * gains
    roi_rgb = rgb[y:y + hgt, x:x + w]
    gt = gt * gains
    out_w, out_h = scale * w, scale * hgt
    resized = cv2.resize(gt, (out_w, out_h), interpolation=cv2.INTER_CUBIC) if gt.shape[:2] != (out_h, out_w) \
        else gt
    if match_histogram:
        resized = np.stack([histogram_match(resized[..., c], roi_rgb[..., c]) for c in range(3)], axis=-1)
    aligned, mask = warp(resized, h, out_w, out_h)
    return AlignedPair(aligned.astype(np.float32), roi_rgb.astype(np.float32), mask, (x, y, w, hgt))
