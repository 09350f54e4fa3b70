import math

import numpy as np
import pytest
from scipy import ndimage

from rawforge.errors import DimensionError, MeasurementError
from rawforge.evaluation import (MtfCurve, compute_mtf, evaluate_modes, evaluate_pair_set, mtf_crossing, psnr, ssim,
                                 summarize_mtf, summarize_mtf_grid)
from rawforge.image import RawFrame, mosaic, pack_bayer
from rawforge.patterns import siemens_star


def blurred_star(sigma, size=257, spokes=20, up=8):
    """Star point-sampled on an up-times finer grid, blurred there, then decimated.

    Decimating with [0::up] keeps samples at exact integer positions of the
    coarse grid, so the result is the continuous star convolved with a
    Gaussian and point-sampled, with no pixel-aperture loss.
    """
    fine = siemens_star((size - 1) * up + 1, spokes, radius=(size / 2 - 1) * up, supersample=1)
    return ndimage.gaussian_filter(fine.astype(np.float64), sigma * up, mode="nearest")[::up, ::up]


@pytest.fixture(scope="module")
def star_sigma1():
    return blurred_star(1.0)


def test_mtf_tracks_gaussian(star_sigma1):
    c = (256 / 2, 256 / 2)
    # Stay clear of the rim, where blur mixes in the uniform background.
    curve = compute_mtf(star_sigma1, c, 20, outer_radius=115)
    f = curve.frequencies
    sel = (f >= 0.05) & (f <= 0.35)
    analytic = np.exp(-2 * math.pi ** 2 * f[sel] ** 2)
    assert np.max(np.abs(curve.contrast[sel] / analytic - 1)) < 0.05
    f50, sat = mtf_crossing(curve, 0.5)
    assert not sat
    assert f50 == pytest.approx(math.sqrt(math.log(2) / 2) / math.pi, rel=0.05)


def test_mtf_of_ideal_star_stays_high():
    star = siemens_star(257, 20, supersample=1)
    curve = compute_mtf(star, (128.0, 128.0), 20, outer_radius=120)
    assert curve.contrast[curve.frequencies < 0.35].min() >= 0.95
    f50, sat = mtf_crossing(curve, 0.5)
    assert sat and f50 == pytest.approx(curve.frequencies[-1])


def test_mtf_invariant_to_affine_intensity(star_sigma1):
    a = compute_mtf(star_sigma1, (128.0, 128.0), 20, outer_radius=115)
    b = compute_mtf(0.5 * star_sigma1 + 0.1, (128.0, 128.0), 20, outer_radius=115)
    np.testing.assert_allclose(b.contrast, a.contrast, rtol=0, atol=1e-6)


def test_identity_mtf_dominates_blurred(star_sigma1):
    sharp = compute_mtf(blurred_star(0.3), (128.0, 128.0), 20, outer_radius=115)
    soft = compute_mtf(star_sigma1, (128.0, 128.0), 20, outer_radius=115)
    np.testing.assert_array_equal(sharp.frequencies, soft.frequencies)
    # The three plateau radii average to 1 in both curves by construction.
    assert np.all(sharp.contrast[3:] >= soft.contrast[3:])


def test_bilinear_sampling_option(star_sigma1):
    curve = compute_mtf(star_sigma1, (128.0, 128.0), 20, sampling="bilinear", outer_radius=115)
    assert curve.contrast[0] == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        compute_mtf(star_sigma1, (128.0, 128.0), 20, sampling="spline")


def test_mtf_channels_and_errors(star_sigma1):
    rgb = np.dstack([star_sigma1, star_sigma1, np.full_like(star_sigma1, 0.5)])
    g = compute_mtf(rgb, (128.0, 128.0), 20, channel="green", outer_radius=115)
    direct = compute_mtf(star_sigma1, (128.0, 128.0), 20, outer_radius=115)
    np.testing.assert_allclose(g.contrast, direct.contrast)
    with pytest.raises(MeasurementError):
        compute_mtf(star_sigma1, (3.0, 3.0), 20)
    with pytest.raises(MeasurementError):
        compute_mtf(np.full((64, 64), 0.5), (32.0, 32.0), 20)
    with pytest.raises(DimensionError):
        compute_mtf(np.zeros((2, 2, 2, 2)), (1.0, 1.0))


def test_crossing_interpolates_on_monotone_fit():
    curve = MtfCurve(np.array([0.1, 0.2, 0.3, 0.4]), np.array([1.0, 0.7, 0.3, 0.1]), (0, 0))
    f, sat = mtf_crossing(curve, 0.5)
    assert f == pytest.approx(0.25) and not sat
    # A bump above the plateau is pooled away by the isotonic fit.
    bumpy = MtfCurve(np.array([0.1, 0.2, 0.3]), np.array([0.8, 1.0, 0.2]), (0, 0))
    f, _ = mtf_crossing(bumpy, 0.5)
    assert f == pytest.approx(0.2 + 0.1 * (0.9 - 0.5) / (0.9 - 0.2))


def test_relative_mtf_identity(star_sigma1):
    curve = compute_mtf(star_sigma1, (128.0, 128.0), 20, outer_radius=115)
    s = summarize_mtf(curve, curve)
    assert s.relative_mtf50 == 1.0 and s.relative_mtf25 == 1.0
    grid = summarize_mtf_grid([curve, curve], [curve, curve])
    assert grid["mean"]["relative_mtf50"] == 1.0
    with pytest.raises(MeasurementError):
        summarize_mtf_grid([curve], [])


def test_psnr_oracle(rng):
    a = rng.random((16, 16))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == 20.0
    assert psnr(a, a) == math.inf
    mse = np.mean((a - 0.5) ** 2)
    assert psnr(a, np.full_like(a, 0.5), peak=2.0) == pytest.approx(10 * math.log10(4 / mse))
    with pytest.raises(DimensionError):
        psnr(a, a[:4])


def _ssim_oracle(a, b, peak=1.0):
    """Direct SSIM with an explicit 11x11 Gaussian window on interior pixels."""
    r = 5
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / 1.5) ** 2)
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(r, a.shape[0] - r):
        for j in range(r, a.shape[1] - r):
            pa, pb = a[i - r:i + r + 1, j - r:j + r + 1], b[i - r:i + r + 1, j - r:j + r + 1]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * pa * pa).sum() - ma ** 2, (w * pb * pb).sum() - mb ** 2
            cab = (w * pa * pb).sum() - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cab + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_direct_windowed_oracle(rng):
    a = rng.random((24, 26))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), rel=1e-10)
    assert ssim(a, a) == 1.0
    rgb = rng.random((24, 24, 3))
    assert ssim(rgb, rgb) == 1.0
    assert ssim(rgb, 1 - rgb) < 0.5


def test_pair_modes_report_separately(rng):
    pairs = []
    for _ in range(3):
        gt = rng.random((16, 16, 3))
        pred = np.clip(gt + 0.05 * rng.standard_normal(gt.shape), 0, 1)
        pairs.append((RawFrame(mosaic(pred, "RGGB"), "RGGB"), RawFrame(mosaic(gt, "RGGB"), "RGGB")))
    res = evaluate_modes(pairs)
    assert set(res) == {"raw-packed", "rgb"}
    assert res["raw-packed"]["count"] == 3 and res["raw-packed"]["mode"] == "raw-packed"
    assert res["raw-packed"]["mean_psnr"] != res["rgb"]["mean_psnr"]
    p, g = pairs[0]
    expect = psnr(pack_bayer(p.data), pack_bayer(g.data))
    assert res["raw-packed"]["pairs"][0]["psnr"] == pytest.approx(expect)
    rgb_only = evaluate_pair_set([(rng.random((8, 8, 3)),) * 2], "rgb")
    assert rgb_only["mean_ssim"] == 1.0
    with pytest.raises(DimensionError):
        evaluate_pair_set([(rng.random((8, 8, 3)),) * 2], "raw-packed")
    with pytest.raises(ValueError):
        evaluate_pair_set(pairs, "xyz")
