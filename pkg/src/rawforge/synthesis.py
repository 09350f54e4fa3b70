"""Unprocessing: turn HR linear-RGB images into LR mosaicked RAW training pairs.

Each pair goes through four steps: range adjustment to the target sensor,
blur with a pooled RGB kernel set and subsampling, CFA mosaicking, and
white-balance inversion followed by heteroscedastic noise at a random ISO.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .errors import ConfigError, DimensionError, RawforgeError
from .image import CameraProfile, RawFrame, check_rgb, mosaic
from .io import read_json, read_linear_rgb, write_json, write_png16, write_raw
from .kernels.forward import SrKernelSet
from .noise import CHANNELS, HgParams, NoiseModel, interpolate_params, sample_hg_mosaic

log = logging.getLogger(__name__)

KERNEL_SUFFIX = ".f32"
INPUT_SUFFIXES = (".png", ".f32")


@dataclass
class DegradationPool:
    kernel_sets: list
    noise_models: list  # (CameraProfile | None, NoiseModel)
    iso_sampler: str = "log-uniform"
    seed: int = 0

    def __post_init__(self):
        if not self.kernel_sets:
            raise ConfigError("degradation pool has no kernel sets")
        if not self.noise_models:
            raise ConfigError("degradation pool has no noise models")
        scales = {k.scale for k in self.kernel_sets}
        if len(scales) != 1:
            raise ConfigError(f"kernel sets disagree on scale: {sorted(scales)}")
        if self.iso_sampler not in ("log-uniform", "uniform"):
            raise ConfigError(f"unknown ISO sampler {self.iso_sampler!r}")

    @property
    def scale(self) -> int:
        return self.kernel_sets[0].scale

    @property
    def cameras(self) -> list[str]:
        names = {k.camera for k in self.kernel_sets} | {m.camera for _, m in self.noise_models}
        return sorted(n for n in names if n)

    def sample_iso(self, model: NoiseModel, rng: np.random.Generator) -> float:
        lo, hi = min(model.iso_set), max(model.iso_set)
        if self.iso_sampler == "uniform":
            return float(rng.uniform(lo, hi))
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


@dataclass
class SynthPair:
    lr_raw: RawFrame
    hr_target: np.ndarray
    metadata: dict = field(default_factory=dict)


def crop_geometry(hr_shape, scale: int, support: int) -> tuple[int, int, int]:
    """``(n_rows, n_cols, margin)`` of the largest even LR grid that fits."""
    m = support // 2
    n_rows = (hr_shape[0] - 2 * m) // scale // 2 * 2
    n_cols = (hr_shape[1] - 2 * m) // scale // 2 * 2
    if n_rows < 2 or n_cols < 2:
        raise DimensionError(f"HR input {hr_shape[1]}x{hr_shape[0]} is too small for scale {scale} "
                             f"and a {support}x{support} kernel")
    return n_rows, n_cols, m


def blur_subsample(x_hr: np.ndarray, kernels: np.ndarray, scale: int, n_rows: int, n_cols: int,
                   phase: int = 0) -> np.ndarray:
    """Valid convolution of each channel with its kernel, sampled every ``scale`` pixels, as (h, w, 3)."""
    planes = np.ascontiguousarray(np.moveaxis(x_hr, -1, 0), dtype=np.float64)
    out = np.empty((n_rows, n_cols, 3))
    for c in range(3):
        cmap = np.full((2, 2), c, dtype=np.intp)
        out[..., c] = backend.render_lr(planes, kernels, scale, phase, cmap, n_rows, n_cols)
    return out


def synthesize_pair(hr, profile: CameraProfile, pool: DegradationPool, scale: int, rng: np.random.Generator,
                    phase: int = 0, clip: bool = False) -> SynthPair:
    """Degrade one HR image; ``rng`` drives every random choice."""
    hr = check_rgb(hr).astype(np.float64)
    if scale != pool.scale:
        raise ConfigError(f"requested scale {scale} but the pool holds scale-{pool.scale} kernels")
    k_idx = int(rng.integers(len(pool.kernel_sets)))
    kset: SrKernelSet = pool.kernel_sets[k_idx]
    n_idx = int(rng.integers(len(pool.noise_models)))
    _, model = pool.noise_models[n_idx]
    iso = pool.sample_iso(model, rng)
    n_rows, n_cols, m = crop_geometry(hr.shape, scale, kset.support)
    if phase < 0 or phase >= scale:
        raise ConfigError("phase must lie in [0, scale)")

    # 1. Range: kept in normalised sensor units; levels are carried as metadata.
    x = hr[: scale * n_rows + 2 * m, : scale * n_cols + 2 * m]
    # 2. Blur + subsample.
    lr_rgb = blur_subsample(x, kset.kernels, scale, n_rows, n_cols, phase)
    # 3. Mosaic.
    raw = mosaic(lr_rgb, profile.cfa).astype(np.float64)
    # 4. Undo white balance, then add noise in un-gained units.
    gains = np.asarray(profile.wb_gains, dtype=np.float64)
    inv = np.empty_like(raw)
    cmap = profile.cfa.channel_map()
    for i in range(2):
        for j in range(2):
            inv[i::2, j::2] = raw[i::2, j::2] / gains[cmap[i, j]]
    params = {ch: interpolate_params(model, ch, iso) for ch in CHANNELS}
    noisy = sample_hg_mosaic(inv, profile.cfa, params, rng, clip=clip)

    hr_target = x[m + phase: m + phase + scale * n_rows, m + phase: m + phase + scale * n_cols]
    meta = {
        "kernel_id": kset.id,
        "kernel_camera": kset.camera,
        "kernel_patch": list(kset.patch_index),
        "noise_camera": model.camera,
        "noise_index": n_idx,
        "iso": iso,
        "noise_params": {ch: {"beta1": p.beta1, "beta2": p.beta2} for ch, p in params.items()},
        "wb_gains": list(profile.wb_gains),
        "scale": scale,
        "phase": phase,
        "margin": m,
        "black_level": profile.black_level,
        "white_level": profile.white_level,
        "clipped": clip,
    }
    frame = RawFrame(noisy, profile.cfa, profile.black_level, profile.white_level, iso, profile.wb_gains)
    return SynthPair(frame, np.ascontiguousarray(hr_target), meta)


@dataclass
class SynthConfig:
    count: int = 0
    patch_size: int = 256
    scale: int = 4
    seed: int = 0
    workers: int = 1
    clip: bool = False

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError("count must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def pair_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for pair ``index``; unaffected by scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def list_inputs(input_dir) -> list[Path]:
    """Readable linear-RGB inputs, sorted by name; unreadable files are logged and skipped."""
    out = []
    for p in sorted(Path(input_dir).iterdir()):
        if p.suffix.lower() not in INPUT_SUFFIXES or not p.is_file():
            continue
        try:
            read_linear_rgb(p)
        except (OSError, ValueError, KeyError, RawforgeError) as exc:
            log.warning("skipping unreadable input %s: %s", p.name, exc)
            continue
        out.append(p)
    return out


def _make_pair(args):
    index, inputs, profile, pool, cfg, out_dir = args
    rng = pair_rng(cfg.seed, index)
    src_idx = int(rng.integers(len(inputs)))
    src = inputs[src_idx]
    img = read_linear_rgb(src)
    ps = cfg.patch_size
    h, w = img.shape[:2]
    if h < ps or w < ps:
        raise DimensionError(f"{src.name} ({w}x{h}) is smaller than patch_size {ps}")
    y0 = int(rng.integers(h - ps + 1))
    x0 = int(rng.integers(w - ps + 1))
    pair = synthesize_pair(img[y0:y0 + ps, x0:x0 + ps], profile, pool, cfg.scale, rng, clip=cfg.clip)
    stem = f"{index:06d}"
    lr_path = Path(out_dir) / "pairs" / f"{stem}_lr.pgm"
    hr_path = Path(out_dir) / "pairs" / f"{stem}_hr.png"
    lr = pair.lr_raw.with_data(np.clip(pair.lr_raw.data, 0.0, 1.0))
    entry = {"index": index, "source": src.name, "crop": [x0, y0, ps, ps], "seed": cfg.seed,
             "lr": lr_path.relative_to(out_dir).as_posix(), "hr": hr_path.relative_to(out_dir).as_posix(),
             **pair.metadata}
    write_raw(lr_path, lr, extra={"synthesis": entry})
    write_png16(hr_path, np.clip(pair.hr_target, 0.0, 1.0))
    return entry


def batch_synthesize(input_dir, profile: CameraProfile, pool: DegradationPool, cfg: SynthConfig, out_dir) -> dict:
    """Write ``cfg.count`` pairs plus ``manifest.json`` under ``out_dir``.

    Sources are drawn with replacement.  Pair ``i`` depends only on
    ``(cfg.seed, i)``, so output is independent of ``cfg.workers``.
    """
    out_dir = Path(out_dir)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    inputs = list_inputs(input_dir)
    if cfg.count and not inputs:
        raise ConfigError(f"no readable inputs in {input_dir}")
    jobs = [(i, inputs, profile, pool, cfg, out_dir) for i in range(cfg.count)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            entries = list(ex.map(_make_pair, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        entries = [_make_pair(j) for j in jobs]
    manifest = {
        "count": cfg.count,
        "seed": cfg.seed,
        "scale": cfg.scale,
        "patch_size": cfg.patch_size,
        "camera": profile.name,
        "cfa": profile.cfa.layout,
        "inputs": [p.name for p in inputs],
        "pool_cameras": pool.cameras,
        "pairs": entries,
    }
    write_json(out_dir / "manifest.json", manifest)
    return manifest


def load_noise_file(path) -> tuple[CameraProfile | None, NoiseModel]:
    d = read_json(path)
    profile = CameraProfile.from_dict(d["profile"]) if d.get("profile") else None
    model = NoiseModel.from_dict(d.get("noise_model", d))
    if not model.camera and profile is not None:
        model.camera = profile.name
    return profile, model


def pool_from_calibration(kernel_dirs, noise_files, exclude=(), iso_sampler: str = "log-uniform",
                          seed: int = 0) -> DegradationPool:
    """Load kernel sets and noise models, dropping every camera named in ``exclude``."""
    exclude = set(exclude)
    kernels = []
    for d in kernel_dirs:
        for p in sorted(Path(d).glob(f"*{KERNEL_SUFFIX}")):
            try:
                ks = SrKernelSet.load(p)
            except (KeyError, OSError, ValueError) as exc:
                log.warning("skipping %s: %s", p, exc)
                continue
            if ks.camera not in exclude:
                kernels.append(ks)
    models = [pm for pm in (load_noise_file(f) for f in noise_files) if pm[1].camera not in exclude]
    if not kernels or not models:
        raise ConfigError(f"degradation pool is empty after excluding {sorted(exclude)}")
    return DegradationPool(kernels, models, iso_sampler, seed)


def zero_noise_model(iso_set=(50, 100, 200, 400, 800, 1600, 3200), camera: str = "") -> NoiseModel:
    from .noise import build_noise_model

    params = {float(iso): {ch: HgParams(0.0, 0.0, ch, float(iso)) for ch in CHANNELS} for iso in iso_set}
    return build_noise_model(params, camera)
