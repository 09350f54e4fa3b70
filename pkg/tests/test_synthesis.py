import math
from pathlib import Path

import numpy as np
import pytest

from rawforge.errors import ConfigError, DimensionError
from rawforge.image import CameraProfile, CfaPattern
from rawforge.io import write_json, write_png16
from rawforge.kernels.forward import SrKernelSet
from rawforge.kernels.gaussian import GaussianKernelSpec, gen_gaussian_kernel
from rawforge.noise import CHANNELS, HgParams, build_noise_model, estimate_hg_params
from rawforge.synthesis import (DegradationPool, SynthConfig, _make_pair, batch_synthesize, crop_geometry,
                                list_inputs, pair_rng, pool_from_calibration, synthesize_pair, zero_noise_model)

ISOS = (50, 100, 200, 400, 800, 1600, 3200)


def delta_kernels(support=21):
    k = np.zeros((3, support, support))
    k[:, support // 2, support // 2] = 1.0
    return k


def flat_noise_model(beta1, beta2, camera=""):
    """The same HG parameters at every ISO, so the sampled ISO does not matter."""
    params = {float(i): {ch: HgParams(beta1, beta2, ch, float(i)) for ch in CHANNELS} for i in ISOS}
    return build_noise_model(params, camera)


def subsample_mosaic_oracle(hr, scale, margin, phase, n_rows, n_cols, layout):
    """Pick HR pixel (margin + phase + s*i) and keep the CFA channel of each site."""
    idx = {"r": 0, "g": 1, "b": 2}
    out = np.empty((n_rows, n_cols))
    for i in range(n_rows):
        for j in range(n_cols):
            label = layout[2 * (i % 2) + (j % 2)].lower()
            out[i, j] = hr[margin + phase + scale * i, margin + phase + scale * j, idx[label]]
    return out


@pytest.mark.parametrize("layout,phase", [("RGGB", 0), ("GBRG", 0), ("BGGR", 1), ("GRBG", 3)])
def test_identity_path_matches_subsample_mosaic_oracle(rng, layout, phase):
    hr = rng.random((68, 76, 3))
    profile = CameraProfile("cam", layout, wb_gains=(1.0, 1.0, 1.0))
    pool = DegradationPool([SrKernelSet(delta_kernels(), 4)], [(profile, zero_noise_model())])
    pair = synthesize_pair(hr, profile, pool, 4, rng, phase=phase)
    n_rows, n_cols, m = crop_geometry(hr.shape, 4, 21)
    expected = subsample_mosaic_oracle(hr, 4, m, phase, n_rows, n_cols, layout)
    assert pair.lr_raw.data.shape == (n_rows, n_cols)
    np.testing.assert_array_equal(pair.lr_raw.data, expected)
    # The HR target is registered so LR pixel i sits on target pixel s*i.
    assert pair.hr_target.shape == (4 * n_rows, 4 * n_cols, 3)
    np.testing.assert_array_equal(pair.hr_target[::4, ::4], hr[m + phase::4, m + phase::4][:n_rows, :n_cols])


def test_crop_geometry_and_margin_errors(rng):
    assert crop_geometry((256, 256), 4, 21) == (58, 58, 10)
    assert crop_geometry((64, 64), 4, 21) == (10, 10, 10)
    assert crop_geometry((36, 50), 2, 5) == (16, 22, 2)
    with pytest.raises(DimensionError):
        crop_geometry((24, 24), 4, 21)
    profile = CameraProfile("cam", "RGGB")
    pool = DegradationPool([SrKernelSet(delta_kernels(), 4)], [(profile, zero_noise_model())])
    with pytest.raises(DimensionError):
        synthesize_pair(rng.random((24, 24, 3)), profile, pool, 4, rng)
    with pytest.raises(ConfigError):
        synthesize_pair(rng.random((64, 64, 3)), profile, pool, 2, rng)
    with pytest.raises(ConfigError):
        synthesize_pair(rng.random((64, 64, 3)), profile, pool, 4, rng, phase=4)


def test_pool_validation():
    model = zero_noise_model()
    with pytest.raises(ConfigError):
        DegradationPool([], [(None, model)])
    with pytest.raises(ConfigError):
        DegradationPool([SrKernelSet(delta_kernels(), 4)], [])
    with pytest.raises(ConfigError):
        DegradationPool([SrKernelSet(delta_kernels(), 4), SrKernelSet(delta_kernels(), 2)], [(None, model)])
    with pytest.raises(ConfigError):
        DegradationPool([SrKernelSet(delta_kernels(), 4)], [(None, model)], iso_sampler="gamma")


def test_log_uniform_iso_sampler_stays_in_range():
    model = zero_noise_model()
    pool = DegradationPool([SrKernelSet(delta_kernels(), 4)], [(None, model)])
    rng = np.random.default_rng(5)
    isos = np.array([pool.sample_iso(model, rng) for _ in range(4000)])
    assert isos.min() >= 50 and isos.max() <= 3200
    # log(ISO) is uniform on [log 50, log 3200]: its mean sits at the midpoint.
    assert np.log(isos).mean() == pytest.approx(0.5 * (math.log(50) + math.log(3200)), abs=0.05)
    uni = DegradationPool([SrKernelSet(delta_kernels(), 4)], [(None, model)], iso_sampler="uniform")
    isos = np.array([uni.sample_iso(model, rng) for _ in range(4000)])
    assert isos.mean() == pytest.approx(1625, rel=0.03)


def _constant_field_bursts(levels, frames, gains, beta1, beta2, size=276):
    kernel = gen_gaussian_kernel(GaussianKernelSpec(1.2, 0.8, 0.3, 21))
    profile = CameraProfile("cam", "GBRG", wb_gains=gains)
    pool = DegradationPool([SrKernelSet(np.stack([kernel] * 3), 4)], [(profile, flat_noise_model(beta1, beta2))])
    bursts = []
    for li, level in enumerate(levels):
        hr = np.full((size, size, 3), level)
        bursts.append([synthesize_pair(hr, profile, pool, 4, pair_rng(li, f)).lr_raw for f in range(frames)])
    return bursts


def _fit_over_levels(bursts):
    """Stack one burst per level side by side so a single fit sees every level.

    Frames carry their sampled ISO; the parameters are ISO-flat, so one
    nominal ISO stands in for all of them.
    """
    frames = []
    for f in range(len(bursts[0])):
        frames.append(bursts[0][f].with_data(np.hstack([b[f].data for b in bursts]), iso=100.0))
    w = bursts[0][0].width
    regions = [(0, i * w, bursts[0][0].height, (i + 1) * w) for i in range(len(bursts))]
    return estimate_hg_params(frames, regions)


def test_noise_recalibration_through_synthesizer():
    beta1, beta2 = 1e-4, 1e-6
    levels = np.linspace(0.04, 0.9, 10)
    gains = (2.0, 1.0, 1.8)
    bursts = _constant_field_bursts(levels, 100, gains, beta1, beta2)
    # Noise is added after white-balance inversion: red sites carry level / 2.
    red = CfaPattern("GBRG").offset("r")
    assert bursts[-1][0].data[red[0]::2, red[1]::2].mean() == pytest.approx(levels[-1] / 2, rel=0.01)
    fitted = _fit_over_levels(bursts)
    for ch in CHANNELS:
        assert fitted[ch].beta1 == pytest.approx(beta1, rel=0.05), ch
        assert fitted[ch].beta2 == pytest.approx(beta2, rel=0.05), ch


def test_scaling_wb_gains_leaves_applied_noise_unchanged():
    beta1, beta2 = 2e-4, 4e-6
    for lam in (1.0, 2.0):
        (burst,) = _constant_field_bursts([0.6], 100, (2.0 * lam, 1.0 * lam, 1.5 * lam), beta1, beta2, size=148)
        stack = np.stack([f.data for f in burst])
        for ch in CHANNELS:
            i, j = burst[0].cfa.offset(ch)
            sites = stack[:, i::2, j::2]
            mean = sites.mean()
            gain = {"r": 2.0, "g1": 1.0, "g2": 1.0, "b": 1.5}[ch] * lam
            assert mean == pytest.approx(0.6 / gain, rel=0.01)
            assert sites.var(axis=0, ddof=1).mean() == pytest.approx(beta1 * mean + beta2, rel=0.05)


def test_metadata_records_degradation(rng):
    kernel = SrKernelSet(delta_kernels(), 4, camera="a", patch_index=(1, 2))
    profile = CameraProfile("a", "RGGB", black_level=64, white_level=1023)
    pool = DegradationPool([kernel], [(profile, flat_noise_model(1e-4, 1e-6, "a"))])
    pair = synthesize_pair(rng.random((64, 64, 3)), profile, pool, 4, rng)
    meta = pair.metadata
    assert meta["kernel_id"] == kernel.id and meta["kernel_patch"] == [1, 2]
    assert 50 <= meta["iso"] <= 3200 and pair.lr_raw.iso == meta["iso"]
    assert meta["noise_params"]["r"]["beta1"] == pytest.approx(1e-4)
    assert meta["black_level"] == 64 and meta["white_level"] == 1023 and meta["margin"] == 10


def _write_inputs(tmp_path, rng, n=3, size=96):
    d = tmp_path / "in"
    d.mkdir()
    for i in range(n):
        write_png16(d / f"img{i}.png", rng.random((size, size, 3)))
    (d / "broken.png").write_bytes(b"not a png")
    (d / "notes.txt").write_text("ignored")
    return d


def _tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _small_pool():
    kernel = gen_gaussian_kernel(GaussianKernelSpec(1.0, 1.0, 0.0, 21))
    profile = CameraProfile("cam", "RGGB")
    return profile, DegradationPool([SrKernelSet(np.stack([kernel] * 3), 4, camera="cam", id="k0")],
                                    [(profile, flat_noise_model(1e-4, 1e-6, "cam"))])


def test_batch_synthesize_is_reproducible_across_workers(tmp_path, rng):
    inputs = _write_inputs(tmp_path, rng)
    profile, pool = _small_pool()
    trees = []
    for name, workers in (("w1", 1), ("w1b", 1), ("w8", 8)):
        batch_synthesize(inputs, profile, pool, SynthConfig(count=6, patch_size=64, seed=11, workers=workers),
                         tmp_path / name)
        trees.append(_tree_bytes(tmp_path / name))
    assert trees[0] == trees[1] == trees[2]
    assert len(trees[0]) == 1 + 6 * 3  # manifest plus lr.pgm, lr.json, hr.png per pair


def test_manifest_audit_and_isolated_rerun(tmp_path, rng):
    inputs = _write_inputs(tmp_path, rng)
    assert [p.name for p in list_inputs(inputs)] == ["img0.png", "img1.png", "img2.png"]
    profile, pool = _small_pool()
    cfg = SynthConfig(count=12, patch_size=64, seed=3)
    manifest = batch_synthesize(inputs, profile, pool, cfg, tmp_path / "out")
    assert manifest["count"] == 12 and len(manifest["pairs"]) == 12
    assert {e["source"] for e in manifest["pairs"]} <= {"img0.png", "img1.png", "img2.png"}
    for e in manifest["pairs"]:
        x0, y0, w, h = e["crop"]
        assert w == h == 64 and 0 <= x0 <= 32 and 0 <= y0 <= 32
    # Pair 5 re-executed alone from its recorded (seed, index) reproduces the same files.
    before = _tree_bytes(tmp_path / "out" / "pairs")
    (tmp_path / "rerun" / "pairs").mkdir(parents=True, exist_ok=True)
    entry = _make_pair((5, list_inputs(inputs), profile, pool, cfg, tmp_path / "rerun"))
    assert entry == manifest["pairs"][5]
    again = _tree_bytes(tmp_path / "rerun" / "pairs")
    assert all(again[k] == before[k] for k in again) and len(again) == 3


def test_count_zero_writes_empty_manifest(tmp_path, rng):
    profile, pool = _small_pool()
    manifest = batch_synthesize(_write_inputs(tmp_path, rng), profile, pool, SynthConfig(count=0), tmp_path / "o")
    assert manifest["pairs"] == [] and (tmp_path / "o" / "manifest.json").exists()


def _write_calibration(root, camera, rng):
    kdir = root / f"k_{camera}"
    kdir.mkdir()
    SrKernelSet(delta_kernels(), 4, camera=camera).save(kdir / "kernels_r00_c00.f32")
    noise = root / f"noise_{camera}.json"
    write_json(noise, {"camera": camera, "profile": CameraProfile(camera).to_dict(),
                       "noise_model": flat_noise_model(1e-4, 1e-6, camera).to_dict()})
    return kdir, noise


def test_pool_exclusion(tmp_path, rng):
    cams = [f"cam{i}" for i in range(8)]
    paths = [_write_calibration(tmp_path, c, rng) for c in cams]
    kdirs, nfiles = [p[0] for p in paths], [p[1] for p in paths]
    pool = pool_from_calibration(kdirs, nfiles, exclude=["cam3"])
    assert pool.cameras == [c for c in cams if c != "cam3"]
    assert len(pool.kernel_sets) == 7 and len(pool.noise_models) == 7
    assert len(pool_from_calibration(kdirs, nfiles).cameras) == 8
    with pytest.raises(ConfigError, match="cam"):
        pool_from_calibration(kdirs, nfiles, exclude=cams)
