"""Planted-kernel scenes: render measured patches through the forward model.

Used for closed-loop checks of the estimator and as the shipped CLI fixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..alignment.homography import Homography
from ..alignment.warp import warp
from ..patterns import gen_random_structures
from ..radiometric import two_point_linearize
from .estimate import FlatFields
from .forward import forward_model
from .gaussian import GaussianKernelSpec, gen_gaussian_kernel


def planted_anisotropic(support: int = 21) -> np.ndarray:
    """Per-channel planted kernels around sigma=(1.5, 0.7), theta=30 degrees."""
    specs = [
        GaussianKernelSpec(1.5, 0.7, math.radians(30), support),
        GaussianKernelSpec(1.4, 0.75, math.radians(30), support),
        GaussianKernelSpec(1.6, 0.8, math.radians(35), support),
    ]
    return np.stack([gen_gaussian_kernel(s) for s in specs])


def vignette_fields(shape, white=0.8, black=0.03, falloff=0.15) -> FlatFields:
    """Radial white-field falloff with slightly different per-channel gains."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((xx - (w - 1) / 2) ** 2 + (yy - (h - 1) / 2) ** 2) / (max(h, w) / 2) ** 2
    gains = np.array([0.92, 1.0, 0.88])
    wf = white * (1 - falloff * r2)[..., None] * gains
    bf = np.full((h, w, 3), black) * np.array([1.0, 1.05, 0.95])
    return FlatFields(wf, bf)


def default_planted_h(display_pad: int, hr_extent, angle_deg: float = 0.4, subpixel=(0.3, -0.2)) -> Homography:
    """Display -> HR-grid map: small rotation about the centre plus offset.

    ``hr_extent`` is a side length or an ``(height, width)`` pair.
    """
    eh, ew = (hr_extent, hr_extent) if np.isscalar(hr_extent) else hr_extent
    cy, cx = (eh - 1) / 2, (ew - 1) / 2
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    to_c = np.array([[1, 0, -cx - display_pad], [0, 1, -cy - display_pad], [0, 0, 1]])
    back = np.array([[1, 0, cx + subpixel[0]], [0, 1, cy + subpixel[1]], [0, 0, 1]])
    persp = np.array([[1, 0, 0], [0, 1, 0], [2e-5, -1e-5, 1]])
    return Homography(back @ rot @ persp @ to_c)


@dataclass
class PlantedScene:
    measured: list
    displayed: list
    fields: FlatFields
    h_true: Homography
    kernels: np.ndarray
    scale: int
    cfa: str


def planted_scene(n: int = 32, scale: int = 4, support: int = 21, batch: int = 20, kernels=None,
                  h_true: Homography | None = None, seed: int = 0, display_pad: int = 8,
                  cfa: str = "RGGB", fields: FlatFields | None = None) -> PlantedScene:
    hr = scale * n + 2 * (support // 2)
    m = hr + 2 * display_pad
    displayed = gen_random_structures(batch, m, m, seed).frames
    kernels = planted_anisotropic(support) if kernels is None else np.asarray(kernels, dtype=np.float64)
    h_true = default_planted_h(display_pad, hr) if h_true is None else h_true
    fields = vignette_fields((hr, hr)) if fields is None else fields
    measured = []
    for pat in displayed:
        warped, _ = warp(pat, h_true, hr, hr)
        x_hr = two_point_linearize(warped, fields.white, fields.black, fields.black_level, fields.white_level,
                                   fields.max_value)
        measured.append(forward_model(x_hr, kernels, scale, cfa))
    return PlantedScene(measured, displayed, fields, h_true, kernels, scale, cfa)
