import warnings

import numpy as np
import pytest

from rawforge.errors import ConfigError, FitError, RangeError, RawforgeError
from rawforge.image import CfaPattern, RawFrame
from rawforge.noise import (CHANNELS, HgParams, NoiseFitWarning, NoiseModel, build_noise_model, estimate_hg_params,
                            fit_hg_line, fit_iso_curves, interpolate_params, region_statistics, sample_hg_mosaic,
                            sample_hg_noise, sample_pg_noise)

ISO_SET = (50, 100, 200, 400, 800, 1600, 3200)


def test_hg_sampler_moments(rng):
    p = HgParams(1e-3, 1e-4)
    clean = np.full(200_000, 0.3)
    x = sample_hg_noise(clean, p, rng)
    assert x.mean() == pytest.approx(0.3, abs=3 * np.sqrt(4e-4 / 2e5))
    assert x.var() == pytest.approx(4e-4, rel=0.02)
    assert sample_hg_noise(clean, HgParams(0, 0), rng).tolist() == clean.tolist()
    clipped = sample_hg_noise(np.full(1000, 0.999), HgParams(0.1, 0), rng, clip=True)
    assert clipped.max() <= 1 and clipped.min() >= 0
    with pytest.raises(RawforgeError):
        sample_hg_noise(clean, HgParams(-1, 0), rng)


def test_mosaic_sampler_uses_per_label_params(rng):
    cfa = CfaPattern("GBRG")
    params = {"r": HgParams(0, 1e-2), "g1": HgParams(0, 0), "g2": HgParams(0, 4e-2), "b": HgParams(0, 9e-2)}
    out = sample_hg_mosaic(np.zeros((400, 400)), cfa, params, rng)
    for lab, p in params.items():
        i, j = cfa.offset(lab)
        assert out[i::2, j::2].var() == pytest.approx(p.beta2, rel=0.05, abs=1e-12)


def test_pg_sampler_moments(rng):
    x = sample_pg_noise(np.full(200_000, 0.2), 1e-3, 0.01, rng)
    assert x.var() == pytest.approx(0.2 * 1e-3 + 1e-4, rel=0.03)
    with pytest.raises(ConfigError):
        sample_pg_noise(np.zeros(3), 0, 0, rng)


def test_fit_line_exact_and_weighting():
    mu = np.linspace(0.1, 0.9, 6)
    var = 2e-4 * mu + 3e-6
    for w in ("counts", "inverse_variance"):
        p = fit_hg_line(mu, var, np.full(6, 50), w, "r", 200)
        assert p.beta1 == pytest.approx(2e-4, rel=1e-9)
        assert p.beta2 == pytest.approx(3e-6, rel=1e-6)
        assert (p.channel, p.iso) == ("r", 200)
    with pytest.raises(ConfigError):
        fit_hg_line(mu, var, np.ones(6), "bogus")


def test_fit_line_projection_warns():
    mu = np.array([0.1, 0.5, 0.9])
    with pytest.warns(NoiseFitWarning):
        p = fit_hg_line(mu, 1e-4 * mu - 1e-5, np.ones(3))
    assert p.beta2 == 0 and p.beta1 > 0
    with pytest.warns(NoiseFitWarning):
        p = fit_hg_line(mu, 1e-4 - 1e-5 * mu, np.ones(3))
    assert p.beta1 == 0 and p.beta2 > 0
    with pytest.raises(FitError):
        fit_hg_line([0.5, 0.5], [1e-4, 2e-4], [1, 1])


def make_burst(levels, params, n_frames, rng, cfa="RGGB", size=80, iso=100.0):
    """Mosaic with one homogeneous region per level, plus the region list."""
    clean = np.concatenate([np.full((size, size), v) for v in levels], axis=1)
    regions = [(0, k * size, size, (k + 1) * size) for k in range(len(levels))]
    frames = [RawFrame(sample_hg_mosaic(clean, CfaPattern(cfa), params, rng), cfa, 0.0, 1.0, iso)
              for _ in range(n_frames)]
    return frames, regions


def test_region_statistics_counts(rng):
    frames, regions = make_burst([0.2, 0.6], {c: HgParams(1e-4, 1e-6, c) for c in CHANNELS}, 3, rng, size=6)
    stats = region_statistics(frames, [(1, 1, 6, 6)])
    # Inside rows 1..5 and cols 1..5: r at even rows/cols -> 2x2, g1 2x3, g2 3x2, b 3x3.
    assert {ch: stats[ch][0][2] for ch in CHANNELS} == {"r": 4, "g1": 6, "g2": 6, "b": 9}
    with pytest.raises(ConfigError):
        region_statistics(frames[:1], regions)
    with pytest.raises(ConfigError):
        region_statistics([frames[0], frames[1].with_data(frames[1].data, iso=200)], regions)


def test_region_statistics_dn_frames_are_normalised(rng):
    dn = [RawFrame(rng.integers(100, 900, (4, 4)).astype(np.uint16), "RGGB", 64, 1023) for _ in range(4)]
    stats = region_statistics(dn, [(0, 0, 4, 4)])
    expect = np.mean([(f.data[0::2, 0::2] - 64.0) / 959 for f in dn])
    assert stats["r"][0][0] == pytest.approx(expect)


@pytest.mark.parametrize("cfa", ["RGGB", "GBRG"])
def test_hg_round_trip_per_channel(cfa, rng):
    truth = {"r": HgParams(1e-4, 1e-6), "g1": HgParams(8e-5, 2e-6), "g2": HgParams(1.2e-4, 5e-7),
             "b": HgParams(1.5e-4, 1.5e-6)}
    frames, regions = make_burst(np.linspace(0.02, 0.92, 10), truth, 100, rng, cfa)
    est = estimate_hg_params(frames, regions)
    for ch in CHANNELS:
        assert est[ch].beta1 == pytest.approx(truth[ch].beta1, rel=0.05)
        assert est[ch].beta2 == pytest.approx(truth[ch].beta2, rel=0.05)


def quadratic_params(iso):
    out = {}
    for k, ch in enumerate(CHANNELS):
        b1 = 1e-6 * (1 + k) + 2e-8 * iso + 3e-12 * iso ** 2
        b2 = 5e-7 + 1e-10 * (k + 1) * iso + 4e-14 * iso ** 2
        out[ch] = HgParams(b1, b2, ch, float(iso))
    return out


def test_iso_fit_exact_quadratic_and_interpolation():
    params = {float(i): quadratic_params(i) for i in ISO_SET}
    model = build_noise_model(params, "cam")
    assert model.iso_set == tuple(float(i) for i in ISO_SET)
    for ch in CHANNELS:
        for key in ("beta1", "beta2"):
            assert max(abs(r) for r in model.fits[ch][key].residuals) < 1e-12
    p = interpolate_params(model, "g2", 600)
    exact = quadratic_params(600)["g2"]
    assert abs(p.beta1 - exact.beta1) < 1e-12 and abs(p.beta2 - exact.beta2) < 1e-12
    with pytest.raises(RangeError):
        interpolate_params(model, "r", 6400)
    assert interpolate_params(model, "r", 6400, allow_extrapolate=True).beta1 > 0
    with pytest.raises(ConfigError):
        interpolate_params(model, "x", 100)


def test_iso_fit_needs_three_points():
    params = {100.0: quadratic_params(100), 200.0: quadratic_params(200)}
    with pytest.raises(FitError):
        fit_iso_curves(params)


def test_interpolation_clamps_negative_to_zero():
    # A concave fit that dips below zero outside the nodes is clamped.
    params = {float(i): {"r": HgParams(max(1e-4 - 1e-10 * (i - 1000) ** 2, 0), 0.0, "r", i)} for i in (50, 1000, 1900)}
    model = build_noise_model(params)
    assert interpolate_params(model, "r", 3000, allow_extrapolate=True).beta1 == 0.0


def test_noise_model_serialisation():
    model = build_noise_model({float(i): quadratic_params(i) for i in ISO_SET}, "cam")
    back = NoiseModel.from_dict(model.to_dict())
    assert back.camera == "cam" and back.iso_set == model.iso_set
    assert back.calibrated == model.calibrated
    assert interpolate_params(back, "b", 321).beta1 == interpolate_params(model, "b", 321).beta1
