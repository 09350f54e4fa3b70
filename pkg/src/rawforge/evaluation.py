"""Siemens-star MTF measurement and reference metrics (PSNR, SSIM)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .errors import DimensionError, MeasurementError
from .image import CfaPattern, RawFrame, demosaic_bilinear, pack_bayer


@dataclass
class MtfCurve:
    frequencies: np.ndarray
    contrast: np.ndarray
    star_center: tuple[float, float]
    radii: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {"frequencies": self.frequencies.tolist(), "contrast": self.contrast.tolist(),
                "star_center": list(self.star_center)}


@dataclass
class MtfSummary:
    mtf50: float
    mtf25: float
    relative_mtf50: float
    relative_mtf25: float
    saturated50: bool = False
    saturated25: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _luma(img, channel) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a
    if a.ndim != 3:
        raise DimensionError(f"expected a 2-D or (H, W, C) image, got {a.shape}")
    if channel == "mean":
        return a.mean(axis=2)
    if channel == "green":
        return a[..., 1]
    return a[..., int(channel)]


def _fit_sinusoid(theta, values, spokes, harmonics=1):
    cols = [np.ones_like(theta)]
    for k in range(1, harmonics + 1):
        cols += [np.sin(k * spokes * theta), np.cos(k * spokes * theta)]
    coef, *_ = np.linalg.lstsq(np.stack(cols, axis=1), values, rcond=None)
    return math.hypot(coef[1], coef[2]), coef[0]


def compute_mtf(img, center, spokes: int = 20, radii=None, channel="mean", sampling: str = "annulus",
                outer_radius: float | None = None, annulus_width: float = 1.5, harmonics: int = 3) -> MtfCurve:
    """Contrast of the fitted ``A sin(spokes*theta + phi) + m`` per radius.

    ``center`` is ``(x, y)``.  With ``sampling="annulus"`` every pixel whose
    centre lies within ``annulus_width / 2`` of the radius contributes at its
    exact angle, so no interpolation blur enters the measurement.
    ``sampling="bilinear"`` reads ``8 * spokes`` interpolated points on the
    circle instead.  Annulus angles are irregular, so the square wave's
    overtones up to ``harmonics`` are fitted alongside the fundamental to keep
    them from leaking into ``A``.

    ``m`` is the median fitted mean over all radii, which makes the normalised
    curve exactly invariant to affine intensity changes.  Frequencies are
    ``spokes / (2 pi rho)`` cycles/pixel and the curve is normalised by the
    mean contrast of the three largest radii.
    """
    plane = _luma(img, channel)
    h, w = plane.shape
    cx, cy = center
    edge = min(cx, cy, w - 1 - cx, h - 1 - cy) - 1.0
    if outer_radius is None:
        outer_radius = edge
    if radii is None:
        rho_min = spokes / (2 * math.pi * 0.5)
        radii = np.arange(math.ceil(rho_min), math.floor(min(outer_radius, edge)) + 1e-9, 1.0)
    radii = np.asarray(radii, dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r_all = np.hypot(xx - cx, yy - cy)
    t_all = np.arctan2(yy - cy, xx - cx)
    n_ang = 8 * spokes
    angles = 2 * np.pi * np.arange(n_ang) / n_ang
    kept_r, amps, means = [], [], []
    for rho in radii:
        if rho <= 0 or rho > edge:
            continue
        if sampling == "annulus":
            sel = np.abs(r_all - rho) < 0.5 * annulus_width
            if sel.sum() < 2 * harmonics + 2:
                continue
            amp, mean = _fit_sinusoid(t_all[sel], plane[sel], spokes, harmonics)
        elif sampling == "bilinear":
            px = cx + rho * np.cos(angles)
            py = cy + rho * np.sin(angles)
            vals = ndimage.map_coordinates(plane, [py, px], order=1, mode="nearest")
            amp, mean = _fit_sinusoid(angles, vals, spokes, harmonics)
        else:
            raise ValueError(f"unknown sampling {sampling!r}")
        kept_r.append(rho)
        amps.append(amp)
        means.append(mean)
    if len(kept_r) < 3:
        raise MeasurementError(f"only {len(kept_r)} usable radii; the star must lie inside the image")
    kept_r = np.asarray(kept_r)
    level = float(np.median(means))
    contrast = np.asarray(amps) / level if abs(level) > 1e-12 else np.zeros(len(amps))
    order = np.argsort(kept_r)[::-1]
    kept_r, contrast = kept_r[order], contrast[order]
    plateau = contrast[:3].mean()
    if not np.isfinite(plateau) or plateau < 1e-6:
        raise MeasurementError("no measurable modulation at the largest radii")
    freqs = spokes / (2 * np.pi * kept_r)
    return MtfCurve(freqs, contrast / plateau, (float(cx), float(cy)), kept_r)


def mtf_crossing(curve: MtfCurve, level: float) -> tuple[float, bool]:
    """Lowest frequency where the isotonic (non-increasing) fit drops to ``level``.

    Returns ``(frequency, saturated)``; saturated curves report the highest
    measured frequency.
    """
    f = curve.frequencies
    c = optimize.isotonic_regression(curve.contrast, increasing=False).x
    below = np.nonzero(c <= level)[0]
    if len(below) == 0:
        return float(f[-1]), True
    i = below[0]
    if i == 0:
        return float(f[0]), False
    c0, c1 = c[i - 1], c[i]
    t = 0.0 if c0 == c1 else (c0 - level) / (c0 - c1)
    return float(f[i - 1] + t * (f[i] - f[i - 1])), False


def summarize_mtf(sr_curve: MtfCurve, lr_curve: MtfCurve) -> MtfSummary:
    s50, sat50 = mtf_crossing(sr_curve, 0.5)
    s25, sat25 = mtf_crossing(sr_curve, 0.25)
    l50, _ = mtf_crossing(lr_curve, 0.5)
    l25, _ = mtf_crossing(lr_curve, 0.25)
    return MtfSummary(s50, s25, s50 / l50, s25 / l25, sat50, sat25)


def summarize_mtf_grid(sr_curves, lr_curves) -> dict:
    """Per-star summaries plus their averages over the whole star grid."""
    if len(sr_curves) != len(lr_curves) or not sr_curves:
        raise MeasurementError("SR and LR star lists must be non-empty and paired")
    per = [summarize_mtf(s, l) for s, l in zip(sr_curves, lr_curves)]
    keys = ("mtf50", "mtf25", "relative_mtf50", "relative_mtf25")
    return {"stars": [p.to_dict() for p in per],
            "mean": {k: float(np.mean([getattr(p, k) for p in per])) for k in keys}}


def _check_same(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``inf``."""
    a, b = _check_same(a, b)
    d = np.abs(a - b)
    scale = float(d.max()) if d.size else 0.0
    if scale == 0.0:
        return math.inf
    # Normalizing by the largest difference keeps a constant offset exact: 0.1 gives 20 dB, not 20 - 1ulp.
    rmse = scale * math.sqrt(float(np.mean((d / scale) ** 2)))
    return 20.0 * math.log10(peak / rmse)


def _ssim_plane(a, b, c1, c2, sigma, radius):
    filt = lambda x: ndimage.gaussian_filter(x, sigma, truncate=radius / sigma, mode="reflect")  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a * mu_a
    s_bb = filt(b * b) - mu_b * mu_b
    s_ab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    smap = num / den
    if min(smap.shape) > 2 * radius:
        smap = smap[radius:-radius, radius:-radius]
    return float(smap.mean())


def ssim(a, b, peak: float = 1.0, sigma: float = 1.5, window: int = 11, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM with a Gaussian window; channels are averaged.

    The map is averaged away from a ``window // 2`` border.
    """
    a, b = _check_same(a, b)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    radius = window // 2
    if a.ndim == 2:
        return _ssim_plane(a, b, c1, c2, sigma, radius)
    axis_c = 0 if a.ndim == 3 and a.shape[0] == 4 and a.shape[-1] != 4 else -1
    planes_a = np.moveaxis(a, axis_c, 0)
    planes_b = np.moveaxis(b, axis_c, 0)
    return float(np.mean([_ssim_plane(pa, pb, c1, c2, sigma, radius) for pa, pb in zip(planes_a, planes_b)]))


def _as_mosaic(x):
    return x.data if isinstance(x, RawFrame) else np.asarray(x)


def _to_mode(x, mode, cfa):
    arr = _as_mosaic(x)
    if mode == "raw-packed":
        if arr.ndim != 2:
            raise DimensionError("raw-packed mode needs mosaicked inputs")
        return pack_bayer(arr).astype(np.float64)
    if mode == "rgb":
        if arr.ndim == 2:
            return demosaic_bilinear(arr, x.cfa if isinstance(x, RawFrame) else cfa).astype(np.float64)
        return arr.astype(np.float64)
    raise ValueError(f"unknown metric mode {mode!r}")


def evaluate_pair_set(pairs, mode: str = "rgb", peak: float = 1.0, cfa: CfaPattern | str = "RGGB") -> dict:
    """Per-pair and mean PSNR/SSIM for ``(prediction, ground_truth)`` pairs.

    ``mode="raw-packed"`` compares 4-channel Bayer packs of mosaicked data;
    ``mode="rgb"`` compares RGB images, demosaicking mosaics first.
    """
    rows = []
    for i, (pred, gt) in enumerate(pairs):
        p, g = _to_mode(pred, mode, cfa), _to_mode(gt, mode, cfa)
        if p.shape != g.shape:
            raise DimensionError(f"pair {i}: prediction {p.shape} vs ground truth {g.shape}")
        rows.append({"index": i, "psnr": psnr(p, g, peak), "ssim": ssim(p, g, peak)})
    return {
        "mode": mode,
        "count": len(rows),
        "pairs": rows,
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])) if rows else math.nan,
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])) if rows else math.nan,
    }


def evaluate_modes(pairs, modes=("raw-packed", "rgb"), peak: float = 1.0, cfa="RGGB") -> dict:
    pairs = list(pairs)
    return {m: evaluate_pair_set(pairs, m, peak, cfa) for m in modes}
