"""Kernel sets and the HR-to-mosaicked-LR forward model."""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import backend
from ..alignment.homography import Homography
from ..errors import DimensionError
from ..image import CfaPattern
from ..io import read_json, read_planar, sidecar_path, write_planar


@dataclass
class SrKernelSet:
    """Per-channel SR kernels for one FOV patch.

    ``kernels`` is ``(3, K, K)`` for r, g, b.  No sign or sum constraint is
    imposed.  ``refined_h`` maps display coordinates onto the patch's HR grid.
    """

    kernels: np.ndarray
    scale: int
    patch_index: tuple[int, int] = (0, 0)
    refined_h: Optional[Homography] = None
    residual: float = float("nan")
    iterations: int = 0
    phase: int = 0
    camera: str = ""
    id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        if self.kernels.ndim != 3 or self.kernels.shape[0] != 3 or self.kernels.shape[1] != self.kernels.shape[2]:
            raise DimensionError(f"kernels must be (3, K, K), got {self.kernels.shape}")
        if self.kernels.shape[1] % 2 == 0:
            raise DimensionError("kernel support must be odd")
        if not np.all(np.isfinite(self.kernels)):
            raise ValueError("kernel entries must be finite")
        self.patch_index = tuple(int(i) for i in self.patch_index)

    @property
    def support(self) -> int:
        return self.kernels.shape[1]

    @property
    def k_r(self):
        return self.kernels[0]

    @property
    def k_g(self):
        return self.kernels[1]

    @property
    def k_b(self):
        return self.kernels[2]

    def metadata(self) -> dict:
        return {
            "id": self.id,
            "camera": self.camera,
            "scale": self.scale,
            "support": self.support,
            "patch_index": list(self.patch_index),
            "phase": self.phase,
            "refined_h": None if self.refined_h is None else self.refined_h.h.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
        }

    def save(self, path) -> Path:
        """Write ``<path>`` (float32 planes r, g, b) and its JSON header."""
        path = Path(path)
        write_planar(path, self.kernels, extra={"kernel_set": self.metadata()})
        return path

    @classmethod
    def load(cls, path) -> "SrKernelSet":
        meta = read_json(sidecar_path(path))["kernel_set"]
        h = meta.get("refined_h")
        return cls(
            kernels=read_planar(path).astype(np.float64),
            scale=int(meta["scale"]),
            patch_index=tuple(meta.get("patch_index", (0, 0))),
            refined_h=None if h is None else Homography(h),
            residual=float(meta.get("residual") or "nan"),
            iterations=int(meta.get("iterations", 0)),
            phase=int(meta.get("phase", 0)),
            camera=meta.get("camera", ""),
            id=meta.get("id", uuid.uuid4().hex[:12]),
        )


def _kernel_array(kernels) -> np.ndarray:
    if isinstance(kernels, SrKernelSet):
        return kernels.kernels
    k = np.asarray(kernels, dtype=np.float64)
    if k.ndim == 2:
        k = np.stack([k, k, k])
    return k


def lr_geometry(hr_shape, support: int, scale: int, margin: int | None = None) -> tuple[int, int, int]:
    """``(n_rows, n_cols, margin)`` of the LR patch produced from an HR target."""
    half = support // 2
    margin = half if margin is None else margin
    if margin < half:
        raise DimensionError(f"margin {margin} is smaller than the kernel half-width {half}")
    h, w = hr_shape
    inner_h, inner_w = h - 2 * margin, w - 2 * margin
    if inner_h <= 0 or inner_w <= 0 or inner_h % scale or inner_w % scale:
        raise DimensionError(f"HR target {w}x{h} is not scale*N + 2*margin for scale={scale}, margin={margin}")
    return inner_h // scale, inner_w // scale, margin


def forward_model(x_hr, kernels, scale: int, cfa: CfaPattern | str = "RGGB", phase: int = 0,
                  margin: int | None = None) -> np.ndarray:
    """Blur each channel of the HR target, subsample by ``scale`` and mosaic.

    ``x_hr`` is an (H, W, 3) HR target with ``H = scale*N + 2*margin``.  LR
    pixel ``(i, j)`` is centred on HR pixel ``(margin + phase + scale*i,
    margin + phase + scale*j)``.
    """
    x_hr = np.asarray(x_hr, dtype=np.float64)
    if x_hr.ndim != 3 or x_hr.shape[2] != 3:
        raise DimensionError(f"x_hr must be (H, W, 3), got {x_hr.shape}")
    k = _kernel_array(kernels)
    if isinstance(cfa, str):
        cfa = CfaPattern(cfa)
    n_rows, n_cols, margin = lr_geometry(x_hr.shape[:2], k.shape[1], scale, margin)
    offset = margin - k.shape[1] // 2 + phase
    if offset + scale * (n_rows - 1) > x_hr.shape[0] - k.shape[1] or offset < 0:
        raise DimensionError("phase pushes the sampling grid outside the valid convolution support")
    planes = np.ascontiguousarray(np.moveaxis(x_hr, -1, 0))
    return backend.render_lr(planes, k, scale, offset, cfa.channel_map(), n_rows, n_cols)
