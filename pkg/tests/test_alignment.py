import math

import numpy as np
import pytest

from rawforge.alignment import (CorrespondenceSet, Homography, align_reference, decode_gray_code, fit_homography,
                                histogram_match, reprojection_error, warp)
from rawforge.alignment.homography import PARAM_INDEX, dlt
from rawforge.errors import ConfigError, DimensionError, FitError, GeometryError
from rawforge.image import CameraProfile, RawFrame, mosaic
from rawforge.patterns import gen_gray_code


def rel_frob(a, b):
    return np.linalg.norm(a.h - b.h) / np.linalg.norm(b.h)


H_TRUE = Homography([[1.8, 0.05, 12.0], [-0.03, 1.75, 7.5], [2e-4, -1e-4, 1.0]])


def exact_pairs(h, n, rng):
    disp = rng.uniform(0, 200, (n, 2))
    return CorrespondenceSet(h.apply(disp), disp)


def test_homography_normalises_and_composes():
    h = Homography(2 * H_TRUE.h)
    assert h.h[2, 2] == 1
    np.testing.assert_allclose((h @ h.inverse()).h, np.eye(3), atol=1e-12)
    p = Homography.from_params(h.params)
    np.testing.assert_allclose(p.h, h.h)
    assert Homography.from_dict(h.to_dict()).h.tolist() == h.h.tolist()
    with pytest.raises(GeometryError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(GeometryError):
        Homography([[1, 2, 0], [2, 4, 0], [0, 0, 1]])


def test_exact_fit(rng):
    c = exact_pairs(H_TRUE, 100, rng)
    assert rel_frob(fit_homography(c), H_TRUE) < 1e-6
    inv = fit_homography(c, direction="sensor_to_display")
    assert rel_frob(inv, H_TRUE.inverse()) < 1e-6


def test_ransac_with_outliers(rng):
    c = exact_pairs(H_TRUE, 100, rng)
    bad = rng.choice(100, 20, replace=False)
    c.sensor_xy[bad] += rng.uniform(20, 60, (20, 2)) * rng.choice([-1, 1], (20, 2))
    assert rel_frob(fit_homography(c), H_TRUE) > 1e-3
    assert rel_frob(fit_homography(c, ransac=True, threshold=1.0), H_TRUE) < 1e-6


def test_fit_degenerate_inputs():
    line = np.c_[np.arange(6.0), 2 * np.arange(6.0)]
    with pytest.raises(FitError):
        fit_homography(CorrespondenceSet(line, line))
    with pytest.raises(FitError):
        dlt(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((3, 2)), np.zeros((4, 2)))


def test_reprojection_error_of_translation():
    a = Homography.identity()
    b = Homography.translation(0.6, 0.8)
    assert reprojection_error(a, b, 10, 10) == pytest.approx(1.0)


def test_warp_conventions():
    img = np.arange(12.0).reshape(3, 4)
    out, mask = warp(img, Homography.translation(1, 0), 4, 3)
    # out(p) = img(H^-1 p): content moves right by one pixel.
    np.testing.assert_allclose(out[:, 1:], img[:, :3])
    assert not mask[:, 0].any() and out[0, 0] == 0
    rgb = np.dstack([img, 2 * img, 3 * img])
    out3, _ = warp(rgb, Homography.identity(), 4, 3)
    np.testing.assert_allclose(out3, rgb)
    with pytest.raises(ValueError):
        warp(img, Homography.identity(), 4, 3, interp="cubic")


def test_warp_jacobian_finite_difference(rng):
    img = rng.random((40, 40, 2))
    h = Homography([[0.98, 0.03, 1.3], [-0.02, 1.01, 2.1], [1e-4, -5e-5, 1.0]])
    _, _, jac = warp(img, h, 32, 32, return_jacobian=True)
    assert jac.shape == (32, 32, 2, 8)
    up = rng.standard_normal((32, 32, 2))
    for k, (i, j) in enumerate(PARAM_INDEX):
        step = 1e-6 if i < 2 else 1e-9
        E = np.zeros((3, 3))
        E[i, j] = step
        fp = np.sum(up * warp(img, Homography(h.h + E), 32, 32)[0])
        fm = np.sum(up * warp(img, Homography(h.h - E), 32, 32)[0])
        fd = (fp - fm) / (2 * step)
        an = np.sum(up * jac[..., k])
        assert fd == pytest.approx(an, rel=1e-4)


def render_gray_codes(w, h, sensor_shape, hom, inverse=False):
    frames = []
    for axis in ("x", "y"):
        seq = gen_gray_code(w, h, axis, inverse)
        frames += [warp(f, hom, sensor_shape[1], sensor_shape[0])[0] for f in seq.frames]
    white = warp(np.ones((h, w)), hom, sensor_shape[1], sensor_shape[0])[0]
    return frames, white, np.zeros(sensor_shape)


@pytest.mark.parametrize("inverse", [False, True])
def test_gray_code_identity_round_trip_exact(inverse):
    w, h = 50, 30
    frames, white, black = render_gray_codes(w, h, (h, w), Homography.identity(), inverse)
    c = decode_gray_code(frames, white, black, w, h, inverse=inverse)
    assert len(c) == w * h
    np.testing.assert_array_equal(c.sensor_xy, c.display_xy)
    assert np.all(c.confidence == 1.0)


def test_gray_code_under_homography():
    w, h = 64, 48
    hom = Homography([[2.1, 0.04, 5.3], [-0.03, 2.05, 4.7], [1e-4, 5e-5, 1.0]])
    frames, white, black = render_gray_codes(w, h, (110, 150), hom)
    c = decode_gray_code(frames, white, black, w, h)
    assert len(c) > 0.9 * 100 * 130
    expect = hom.inverse().apply(c.sensor_xy)
    err = np.linalg.norm(c.display_xy - expect, axis=1)
    assert np.percentile(err, 99) <= 0.5 * math.sqrt(2) + 1e-9
    fitted = fit_homography(c)
    assert reprojection_error(fitted, hom, w, h) < 0.5


def test_gray_code_masks_low_contrast_and_checks_inputs():
    w, h = 16, 8
    frames, white, black = render_gray_codes(w, h, (h, w), Homography.identity())
    white[:, :4] = 0.01
    c = decode_gray_code(frames, white, black, w, h)
    assert len(c) == (w - 4) * h and c.sensor_xy[:, 0].min() == 4
    with pytest.raises(ConfigError):
        decode_gray_code(frames[:-1], white, black, w, h)
    with pytest.raises(DimensionError):
        decode_gray_code(frames, white[:4], black, w, h)


def test_histogram_match_oracle(rng):
    src = rng.random(1000)
    ref = rng.normal(5, 2, 5000)
    out = histogram_match(src, ref)
    # Monotone in the source and distributed like the reference.
    order = np.argsort(src)
    assert np.all(np.diff(out[order]) >= 0)
    np.testing.assert_allclose(np.quantile(out, [0.1, 0.5, 0.9]), np.quantile(ref, [0.1, 0.5, 0.9]), atol=0.05)
    assert histogram_match(np.full(7, 3.0), ref)[0] == pytest.approx(np.median(ref))
    assert histogram_match(np.array([1.0]), np.array([2.0, 4.0]))[0] == 3.0
    # Matching a sample to itself is the identity.
    np.testing.assert_allclose(histogram_match(src, src), src)
    with pytest.raises(ValueError):
        histogram_match(np.array([]), ref)


def test_align_reference_recovers_capture_grid():
    prof = CameraProfile("c", "RGGB", 0, 1, (1.0, 1.0, 1.0))
    yy, xx = np.mgrid[0:16, 0:20] / 20.0
    lr_rgb = np.dstack([0.2 + 0.5 * xx, 0.3 + 0.4 * yy, 0.1 + 0.3 * xx * yy])
    cap = RawFrame(mosaic(lr_rgb, "RGGB").astype(np.float32), "RGGB", 0.0, 1.0)
    gt = np.repeat(np.repeat(lr_rgb, 2, axis=0), 2, axis=1)
    pair = align_reference(gt, cap, prof, Homography.identity(), 2, roi=(4, 2, 10, 8))
    assert pair.gt.shape == (16, 20, 3) and pair.roi.shape == (8, 10, 3)
    assert pair.roi_box == (4, 2, 10, 8) and pair.mask.all()
    # Histogram matching gives the GT the ROI's per-channel distribution.
    for c in range(3):
        assert pair.gt[..., c].min() >= pair.roi[..., c].min() - 1e-6
        assert pair.gt[..., c].max() <= pair.roi[..., c].max() + 1e-6
    shifted = align_reference(gt, cap, prof, Homography.translation(2, 0), 2, roi=(4, 2, 10, 8),
                              match_histogram=False)
    np.testing.assert_allclose(shifted.gt[:, 2:], align_reference(gt, cap, prof, Homography.identity(), 2,
                                                                   roi=(4, 2, 10, 8), match_histogram=False).gt[:, :-2])
    with pytest.raises(GeometryError):
        align_reference(gt, cap, prof, Homography.identity(), 2, roi=(15, 0, 10, 8))
