"""Writes a small synthetic capture set for exercising ``calibrate-kernels`` end to end.

Run ``python -m rawforge.fixtures OUT_DIR`` to regenerate the copy shipped in
``fixtures/kernel_small``.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .alignment.homography import Homography
from .alignment.warp import warp
from .image import CameraProfile, CfaPattern, RawFrame
from .io import write_json, write_png16, write_raw
from .kernels.estimate import KernelEstimationConfig
from .kernels.forward import forward_model
from .kernels.synthetic import default_planted_h, planted_anisotropic
from .noise import HgParams, sample_hg_mosaic
from .patterns import gen_random_structures

FIXTURE_PROFILE = CameraProfile("fixture_cam", CfaPattern("RGGB"), black_level=512.0, white_level=16383.0,
                                wb_gains=(1.0, 1.0, 1.0))


def _fields(shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((xx - (w - 1) / 2) ** 2 + (yy - (h - 1) / 2) ** 2) / (max(h, w) / 2) ** 2
    white = 0.8 * (1 - 0.05 * r2)[..., None] * np.array([0.95, 1.0, 0.9])
    black = np.full((h, w, 3), 0.03)
    return white, black


def make_kernel_fixture(out_dir, patch_size: int = 16, grid=(1, 2), batch: int = 20, scale: int = 4,
                        support: int = 21, burst: int = 4, display_pad: int = 8, seed: int = 0,
                        h_error=(0.3, -0.2)) -> Path:
    """Render patterns through planted kernels and write captures plus a manifest.

    The stored homography is the planted one offset by ``h_error`` HR pixels,
    mimicking an imperfect global calibration.
    """
    out = Path(out_dir)
    cfg = KernelEstimationConfig(patch_size=patch_size, scale=scale, support=support, batch_size=batch)
    lr_h, lr_w = grid[0] * patch_size, grid[1] * patch_size
    m = cfg.margin
    hr = (scale * lr_h + 2 * m, scale * lr_w + 2 * m)
    disp = (hr[0] + 2 * display_pad, hr[1] + 2 * display_pad)
    kernels = planted_anisotropic(support)
    h_true = default_planted_h(display_pad, hr)
    white, black = _fields(hr)
    rng = np.random.default_rng(seed)
    noise = {ch: HgParams(2e-6, 1e-8, ch) for ch in ("r", "g1", "g2", "b")}
    prof = FIXTURE_PROFILE

    def capture(x_hr, name):
        clean = forward_model(x_hr, kernels, scale, prof.cfa)
        d = out / name
        files = []
        for k in range(burst):
            noisy = sample_hg_mosaic(clean, prof.cfa, noise, rng)
            frame = RawFrame(np.clip(noisy, 0, 1), prof.cfa, prof.black_level, prof.white_level, 100.0)
            path = d / f"frame_{k:02d}.pgm"
            write_raw(path, frame)
            files.append(path)
        return d.relative_to(out).as_posix()

    patterns = gen_random_structures(batch, disp[1], disp[0], seed).frames
    entries = []
    for i, pat in enumerate(patterns):
        p_path = out / "patterns" / f"pattern_{i:03d}.png"
        write_png16(p_path, pat)
        warped, _ = warp(pat, h_true, hr[1], hr[0])
        x_hr = (white - black) * warped[..., None] + black
        entries.append({"pattern": p_path.relative_to(out).as_posix(), "burst": capture(x_hr, f"bursts/{i:03d}")})
    white_dir = capture(white, "white")
    black_dir = capture(black, "black")
    write_json(out / "homography.json", (Homography.translation(*h_error) @ h_true).to_dict())
    write_json(out / "profile.json", prof.to_dict())
    write_json(out / "truth.json", {"kernels": kernels.tolist(), "h_true": h_true.h.tolist()})
    write_json(out / "manifest.json", {
        "captures": entries, "white": white_dir, "black": black_dir, "homography": "homography.json",
        "profile": "profile.json", "grid": list(grid), "patch_size": patch_size, "scale": scale,
        "support": support,
    })
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    make_kernel_fixture(args.out_dir, seed=args.seed)


if __name__ == "__main__":
    main()
