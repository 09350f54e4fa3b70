
import numpy as np
import pytest

from rawforge.errors import CalibrationError, ConfigError, FitError
from rawforge.image import RawFrame, mosaic
from rawforge.radiometric import (CalibrationWarning, DisplayResponse, field_to_hr_grid, fit_ccm,
                                  fit_display_curve, global_two_point, linearize, two_point_linearize,
                                  two_point_terms)


def test_two_point_hits_white_and_black(rng):
    white = 0.6 + 0.2 * rng.random((5, 5, 3))
    black = 0.02 + 0.01 * rng.random((5, 5, 3))
    ones = np.ones((5, 5))
    np.testing.assert_allclose(two_point_linearize(ones, white, black), white)
    np.testing.assert_allclose(two_point_linearize(0 * ones, white, black), black)
    # With DN levels the result is expressed in normalised units.
    out = two_point_linearize(255 * ones, 64 + 900 * white, 64 + 900 * black, 64, 964, 255)
    np.testing.assert_allclose(out, white)


def test_two_point_terms_formula():
    g, o = two_point_terms(np.array([800.0]), np.array([100.0]), 64, 1023, 255)
    assert g[0] == pytest.approx((800 - 100) / (255 * 959))
    assert o[0] == pytest.approx((100 - 64) / 959)


def test_two_point_rejects_inverted_fields():
    with pytest.raises(CalibrationError):
        two_point_terms(np.array([0.1]), np.array([0.2]))
    with pytest.raises(ConfigError):
        two_point_terms(np.array([0.3]), np.array([0.2]), 1.0, 1.0)


def test_global_two_point_matches_uniform_fields():
    x = np.linspace(0, 1, 7)
    a = global_two_point(x, 0.8, 0.05)
    b = two_point_linearize(x[:, None], np.full((7, 3), 0.8), np.full((7, 3), 0.05))[:, 0]
    np.testing.assert_allclose(a, b)


def test_display_curve_recovers_gamma():
    levels = np.arange(256)
    meas = 0.01 + (levels / 255.0) ** 2.2
    resp = fit_display_curve(levels, meas)
    assert resp.response[0] == 0
    assert resp.black_offset == pytest.approx(0.01, abs=2e-3)
    q = np.linspace(0, 1, 50)
    np.testing.assert_allclose(resp.curve(q), q ** 2.2, atol=3e-3)
    np.testing.assert_allclose(resp.inverse(resp.curve(q[5:])), q[5:], atol=5e-3)
    assert resp.max_residual < 3e-3


def test_display_curve_projects_non_monotone_with_warning():
    levels = np.arange(32)
    meas = levels / 31.0
    meas[10] = 0.9
    with pytest.warns(CalibrationWarning):
        resp = fit_display_curve(levels, meas)
    assert np.all(np.diff(resp.response) >= 0)


def test_display_curve_errors():
    with pytest.raises(FitError):
        fit_display_curve(np.arange(4), np.arange(4))
    with pytest.raises(FitError):
        fit_display_curve(np.arange(10), np.ones(10))
    with pytest.raises(ConfigError):
        fit_display_curve(np.arange(10), np.arange(9))


def test_ccm_exact_recovery(rng):
    C = np.array([[0.9, 0.1, 0.0], [0.05, 1.1, -0.1], [0.0, 0.2, 0.7]])
    d = rng.random((140, 3))
    fit = fit_ccm(d, d @ C.T)
    np.testing.assert_allclose(fit.matrix, C, atol=1e-12)
    assert fit.rms_residual < 1e-12


def test_ccm_rank_deficient():
    d = np.array([[1, 1, 1], [2, 2, 2], [0.5, 0.5, 0.5]], dtype=float)
    with pytest.raises(FitError):
        fit_ccm(d, d)


def test_linearize_identity_and_ccm():
    resp = DisplayResponse.identity()
    x = np.linspace(0, 1, 12).reshape(2, 2, 3)
    np.testing.assert_allclose(linearize(x, resp), x, atol=1e-6)
    swap = DisplayResponse(resp.codes, resp.response, np.eye(3)[[2, 1, 0]])
    np.testing.assert_allclose(linearize(x, swap), x[..., ::-1], atol=1e-6)
    gray = linearize(np.full((2, 2), 128.0), resp, 255.0)
    assert gray.shape == (2, 2, 3)
    assert gray[0, 0, 0] == pytest.approx(128 / 255, abs=1e-6)
    dr = DisplayResponse.from_dict(swap.to_dict())
    np.testing.assert_array_equal(dr.ccm, swap.ccm)
    with pytest.raises(ConfigError):
        DisplayResponse([0, 1], [1, 0], np.eye(3))


def test_field_to_hr_grid_constant_and_origin():
    rgb = np.broadcast_to(np.array([0.7, 0.6, 0.5]), (8, 8, 3))
    raw = RawFrame(mosaic(rgb, "RGGB").astype(np.float32), "RGGB")
    hr = field_to_hr_grid(raw, 4, (42, 42), origin=5)
    np.testing.assert_allclose(hr, np.broadcast_to([0.7, 0.6, 0.5], (42, 42, 3)), atol=1e-6)
    # A horizontal ramp maps HR column origin + s*j onto LR column j.
    ramp = np.repeat(np.arange(8, dtype=float)[None, :, None], 8, axis=0).repeat(3, axis=2)
    hr = field_to_hr_grid(ramp, 4, (20, 37), origin=5)
    np.testing.assert_allclose(hr[0, 5 + 4 * np.arange(8), 0], np.arange(8))
    assert hr[0, 7, 1] == pytest.approx(0.5)
