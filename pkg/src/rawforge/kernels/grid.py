"""Burst averaging and per-patch kernel estimation over a field-of-view grid."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..alignment.homography import Homography
from ..errors import ConfigError, DimensionError, RawforgeError
from ..image import CfaPattern, RawFrame
from .estimate import FlatFields, KernelEstimationConfig, estimate_kernels
from .forward import SrKernelSet

log = logging.getLogger(__name__)


def average_burst(frames: list[RawFrame]) -> RawFrame:
    """Per-pixel float64 mean of a burst, returned normalised to [0, 1] units.

    DN frames are normalised without clipping before averaging so the mean
    stays unbiased near the black level.
    """
    if not frames:
        raise ConfigError("cannot average an empty burst")
    ref = frames[0]
    meta = ref.metadata()
    acc = np.zeros(ref.data.shape, dtype=np.float64)
    for f in frames:
        if f.data.shape != ref.data.shape or f.metadata() != meta or f.is_normalized != ref.is_normalized:
            raise ConfigError("burst frames differ in geometry or capture metadata")
        if f.is_normalized:
            acc += f.data
        else:
            acc += (f.data.astype(np.float64) - ref.black_level) / (ref.white_level - ref.black_level)
    acc /= len(frames)
    if ref.is_normalized:
        return ref.with_data(acc)
    return ref.with_data(acc, black_level=0.0, white_level=1.0)


@dataclass
class PatchData:
    """Everything one FOV patch needs: LR captures, HR patterns, initial H, flat fields."""

    index: tuple[int, int]
    measured: list
    displayed: list
    init_h: Homography
    fields: FlatFields


@dataclass
class PatchFailure:
    index: tuple[int, int]
    error: str
    message: str


@dataclass
class FovResult:
    kernel_sets: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def grid_shape(self) -> tuple[int, int]:
        idx = [k.patch_index for k in self.kernel_sets] + [f.index for f in self.failures]
        if not idx:
            return (0, 0)
        return (max(i for i, _ in idx) + 1, max(j for _, j in idx) + 1)

    def report(self) -> dict:
        return {
            "patches": [{"patch_index": list(k.patch_index), "id": k.id, "residual": k.residual,
                         "iterations": k.iterations} for k in self.kernel_sets],
            "failures": [{"patch_index": list(f.index), "error": f.error, "message": f.message}
                         for f in self.failures],
        }


def split_fov(measured: list, displayed: list, global_h: Homography, fields: FlatFields,
              cfg: KernelEstimationConfig, grid: tuple[int, int] | None = None) -> list[PatchData]:
    """Tile full-frame LR captures into non-overlapping ``patch_size`` patches.

    ``global_h`` maps display pixels onto the full-frame HR grid, on which LR
    pixel ``i`` sits at HR index ``margin + scale * i``; ``fields`` live on
    that grid.  ``grid`` defaults to as many whole patches as fit.
    """
    n, s = cfg.patch_size, cfg.scale
    ext = cfg.hr_extent
    planes = [np.asarray(y.data if isinstance(y, RawFrame) else y, dtype=np.float64) for y in measured]
    if not planes:
        raise ConfigError("no captures to split")
    lr_h, lr_w = planes[0].shape
    if grid is None:
        grid = (lr_h // n, lr_w // n)
    if n % 2:
        raise ConfigError("patch_size must be even so patches start on a CFA quad")
    out = []
    for r in range(grid[0]):
        for c in range(grid[1]):
            r0, c0 = r * n, c * n
            hy, hx = s * r0, s * c0
            if r0 + n > lr_h or c0 + n > lr_w or hy + ext > fields.white.shape[0] or hx + ext > fields.white.shape[1]:
                raise DimensionError(f"patch {(r, c)} falls outside the captures or calibrated fields")
            sub = FlatFields(fields.white[hy:hy + ext, hx:hx + ext], fields.black[hy:hy + ext, hx:hx + ext],
                             fields.black_level, fields.white_level, fields.max_value)
            out.append(PatchData((r, c), [p[r0:r0 + n, c0:c0 + n] for p in planes], list(displayed),
                                 Homography.translation(-hx, -hy) @ global_h, sub))
    return out


def _run_patch(args):
    patch, cfg, cfa, camera = args
    try:
        if patch.measured is None or patch.displayed is None or len(patch.measured) == 0:
            raise ConfigError("missing capture data")
        return estimate_kernels(patch.measured, patch.displayed, patch.init_h, patch.fields, cfg, cfa,
                                patch_index=patch.index, camera=camera)
    except (RawforgeError, ValueError, np.linalg.LinAlgError) as exc:
        return PatchFailure(tuple(patch.index), type(exc).__name__, str(exc))


def estimate_fov_grid(patches: list[PatchData], cfg: KernelEstimationConfig | None = None,
                      cfa: CfaPattern | str = "RGGB", camera: str = "", workers: int = 1) -> FovResult:
    """Run :func:`estimate_kernels` independently for every patch.

    A failing patch is recorded in ``failures`` and does not stop the others.
    Results are returned in input order regardless of ``workers``.
    """
    cfg = cfg or KernelEstimationConfig()
    jobs = [(p, cfg, cfa, camera) for p in patches]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_patch, jobs))
    else:
        results = [_run_patch(j) for j in jobs]
    res = FovResult()
    for r in results:
        if isinstance(r, SrKernelSet):
            res.kernel_sets.append(r)
        else:
            log.warning("patch %s failed: %s: %s", r.index, r.error, r.message)
            res.failures.append(r)
    return res
