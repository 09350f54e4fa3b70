"""Heteroscedastic Gaussian (shot + read) sensor noise: calibration and sampling.

Noise variance at a normalised, un-white-balanced RAW intensity ``y`` is
``beta1 * y + beta2``, calibrated separately per CFA channel (r, g1, g2, b)
and ISO, with a quadratic-in-ISO fit used for uncalibrated ISO values.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FitError, RangeError, RawforgeError
from .image import CfaPattern, RawFrame, normalize_raw

log = logging.getLogger(__name__)

CHANNELS = ("r", "g1", "g2", "b")


class NoiseFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HgParams:
    beta1: float
    beta2: float
    channel: str = "g1"
    iso: float = 100.0

    def variance(self, y):
        return self.beta1 * np.asarray(y, dtype=np.float64) + self.beta2

    def to_dict(self):
        return {"beta1": self.beta1, "beta2": self.beta2, "channel": self.channel, "iso": self.iso}


@dataclass
class IsoFit:
    """Quadratic ``a*iso**2 + b*iso + c`` with per-node residuals."""

    coeffs: tuple[float, float, float]
    isos: tuple[float, ...]
    residuals: tuple[float, ...]

    def __call__(self, iso):
        a, b, c = self.coeffs
        iso = np.asarray(iso, dtype=np.float64)
        return a * iso * iso + b * iso + c

    def to_dict(self):
        return {"coeffs": list(self.coeffs), "isos": list(self.isos), "residuals": list(self.residuals)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["coeffs"]), tuple(d["isos"]), tuple(d.get("residuals", ())))


@dataclass
class NoiseModel:
    calibrated: dict = field(default_factory=dict)  # (channel, iso) -> HgParams
    fits: dict = field(default_factory=dict)  # channel -> {"beta1": IsoFit, "beta2": IsoFit}
    camera: str = ""

    @property
    def iso_set(self) -> tuple[float, ...]:
        return tuple(sorted({iso for _, iso in self.calibrated}))

    def to_dict(self) -> dict:
        return {
            "camera": self.camera,
            "iso_set": list(self.iso_set),
            "calibrated": [p.to_dict() for p in self.calibrated.values()],
            "fits": {ch: {k: f.to_dict() for k, f in fs.items()} for ch, fs in self.fits.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "NoiseModel":
        cal = {}
        for p in d.get("calibrated", []):
            hp = HgParams(float(p["beta1"]), float(p["beta2"]), p["channel"], float(p["iso"]))
            cal[(hp.channel, hp.iso)] = hp
        fits = {ch: {k: IsoFit.from_dict(f) for k, f in fs.items()} for ch, fs in d.get("fits", {}).items()}
        return cls(cal, fits, d.get("camera", ""))


def _normalized(frame: RawFrame) -> np.ndarray:
    f = frame if frame.is_normalized else normalize_raw(frame)
    return f.data


def _channel_sites(cfa: CfaPattern, channel: str, r0, c0, r1, c1):
    """Row/column slices selecting one CFA channel inside a rectangle."""
    oi, oj = cfa.offset(channel)
    rs = r0 + ((oi - r0) % 2)
    cs = c0 + ((oj - c0) % 2)
    return slice(rs, r1, 2), slice(cs, c1, 2)


def region_statistics(burst: list[RawFrame], regions) -> dict:
    """Per channel: list of ``(mean, variance, count)`` over regions.

    Means and variances are temporal (across the burst, per pixel), then
    averaged over the pixels of each region.
    """
    if len(burst) < 2:
        raise ConfigError("noise calibration needs a burst of at least 2 frames")
    ref = burst[0]
    for f in burst[1:]:
        if f.data.shape != ref.data.shape or f.cfa != ref.cfa or f.iso != ref.iso:
            raise ConfigError("burst frames differ in geometry, CFA or ISO")
    planes = [_normalized(f) for f in burst]
    stats = {ch: [] for ch in CHANNELS}
    for (r0, c0, r1, c1) in regions:
        for ch in CHANNELS:
            rs, cs = _channel_sites(ref.cfa, ch, r0, c0, r1, c1)
            stack = np.stack([p[rs, cs] for p in planes]).astype(np.float64)
            if stack.shape[1] == 0 or stack.shape[2] == 0:
                continue
            mu = stack.mean(axis=0)
            var = stack.var(axis=0, ddof=1)
            stats[ch].append((float(mu.mean()), float(var.mean()), int(mu.size)))
    return stats


def fit_hg_line(means, variances, counts, weighting: str = "inverse_variance", channel: str = "g1",
                iso: float = 100.0, n_frames: int | None = None) -> HgParams:
    """Weighted least squares ``var = beta1 * mean + beta2`` with non-negativity projection.

    ``weighting="counts"`` weights each region by its sample count;
    ``"inverse_variance"`` (default) additionally divides by the squared
    fitted variance, since a variance estimate from ``n`` samples has
    sampling variance ``2 sigma^4 / (n - 1)``; the weights are refined twice.
    """
    mu = np.asarray(means, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    w = np.asarray(counts, dtype=np.float64)
    if len(np.unique(np.round(mu, 12))) < 2:
        raise FitError(f"channel {channel}: need at least 2 distinct mean levels to separate shot and read noise")

    def solve(weights):
        A = np.c_[mu, np.ones_like(mu)]
        sw = np.sqrt(weights)
        coef, *_ = np.linalg.lstsq(A * sw[:, None], var * sw, rcond=None)
        return coef

    b1, b2 = solve(w)
    if weighting == "inverse_variance":
        for _ in range(2):
            pred = np.maximum(b1 * mu + b2, 1e-3 * max(float(np.abs(var).mean()), 1e-30))
            b1, b2 = solve(w / pred ** 2)
    elif weighting != "counts":
        raise ConfigError(f"unknown weighting {weighting!r}")

    if b1 < 0 or b2 < 0:
        warnings.warn(f"channel {channel} ISO {iso}: negative noise parameter (beta1={b1:.3g}, beta2={b2:.3g}) "
                      "projected to zero", NoiseFitWarning, stacklevel=2)
        if b1 < 0 and b2 < 0:
            b1 = b2 = 0.0
        elif b1 < 0:
            b1, b2 = 0.0, max(float(np.sum(w * var) / np.sum(w)), 0.0)
        else:
            b1, b2 = max(float(np.sum(w * mu * var) / np.sum(w * mu * mu)), 0.0), 0.0
    return HgParams(float(b1), float(b2), channel, float(iso))


def estimate_hg_params(burst: list[RawFrame], regions, weighting: str = "inverse_variance") -> dict[str, HgParams]:
    """Calibrate ``beta1``/``beta2`` per CFA channel from a fixed-ISO burst.

    ``regions`` are ``(row0, col0, row1, col1)`` rectangles of homogeneous
    intensity in full-resolution mosaic coordinates.
    """
    stats = region_statistics(burst, regions)
    iso = float(burst[0].iso)
    out = {}
    for ch in CHANNELS:
        if not stats[ch]:
            raise FitError(f"no samples for channel {ch}")
        mu, var, n = zip(*stats[ch])
        out[ch] = fit_hg_line(mu, var, n, weighting, ch, iso, len(burst))
    return out


def _fit_quadratic(isos, values) -> IsoFit:
    isos = np.asarray(isos, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(isos) < 3:
        raise FitError(f"need at least 3 ISO points for a quadratic fit, got {len(isos)}")
    poly = np.polynomial.Polynomial.fit(isos, values, 2).convert()
    c, b, a = (list(poly.coef) + [0.0, 0.0, 0.0])[:3]
    fit = IsoFit((float(a), float(b), float(c)), tuple(isos.tolist()), ())
    fit.residuals = tuple((fit(isos) - values).tolist())
    return fit


def fit_iso_curves(params: dict) -> dict:
    """Quadratic ISO fits per channel and parameter.

    ``params`` maps ISO -> {channel: HgParams}.
    """
    isos = sorted(params)
    fits = {}
    for ch in CHANNELS:
        pts = [(iso, params[iso][ch]) for iso in isos if ch in params[iso]]
        if not pts:
            continue
        xs = [p[0] for p in pts]
        fits[ch] = {
            "beta1": _fit_quadratic(xs, [p[1].beta1 for p in pts]),
            "beta2": _fit_quadratic(xs, [p[1].beta2 for p in pts]),
        }
    return fits


def build_noise_model(params: dict, camera: str = "") -> NoiseModel:
    cal = {(ch, float(iso)): p for iso, per in params.items() for ch, p in per.items()}
    return NoiseModel(cal, fit_iso_curves(params), camera)


def interpolate_params(model: NoiseModel, channel: str, iso: float, allow_extrapolate: bool = False) -> HgParams:
    if channel not in model.fits:
        raise ConfigError(f"noise model has no fit for channel {channel!r}")
    lo, hi = min(model.iso_set), max(model.iso_set)
    if not allow_extrapolate and not lo <= iso <= hi:
        raise RangeError(f"ISO {iso} outside calibrated range [{lo}, {hi}]")
    f = model.fits[channel]
    return HgParams(max(float(f["beta1"](iso)), 0.0), max(float(f["beta2"](iso)), 0.0), channel, float(iso))


def sample_hg_noise(clean, params: HgParams, rng: np.random.Generator, clip: bool = False) -> np.ndarray:
    """Add zero-mean Gaussian noise with variance ``beta1 * y + beta2`` per pixel."""
    clean = np.asarray(clean, dtype=np.float64)
    if params.beta1 < 0 or params.beta2 < 0:
        raise RawforgeError("noise parameters must be non-negative")
    var = params.beta1 * np.maximum(clean, 0.0) + params.beta2
    out = clean + rng.standard_normal(clean.shape) * np.sqrt(var)
    return np.clip(out, 0.0, 1.0) if clip else out


def sample_hg_mosaic(clean: np.ndarray, cfa: CfaPattern, params: dict[str, HgParams], rng: np.random.Generator,
                     clip: bool = False) -> np.ndarray:
    """Channel-aware HG noise for a full mosaic; ``params`` maps CFA label -> HgParams."""
    clean = np.asarray(clean, dtype=np.float64)
    beta1 = np.empty_like(clean)
    beta2 = np.empty_like(clean)
    for label in CHANNELS:
        i, j = cfa.offset(label)
        beta1[i::2, j::2] = params[label].beta1
        beta2[i::2, j::2] = params[label].beta2
    var = beta1 * np.maximum(clean, 0.0) + beta2
    out = clean + rng.standard_normal(clean.shape) * np.sqrt(var)
    return np.clip(out, 0.0, 1.0) if clip else out


def sample_pg_noise(clean, gain: float, read_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson-Gaussian noise: ``Poisson(clean / gain) * gain + N(0, read_sigma**2)``."""
    if gain <= 0:
        raise ConfigError("gain must be positive")
    clean = np.asarray(clean, dtype=np.float64)
    shot = rng.poisson(np.maximum(clean, 0.0) / gain) * gain
    return shot + rng.normal(0.0, read_sigma, clean.shape) if read_sigma > 0 else shot.astype(np.float64)
