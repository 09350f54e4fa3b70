"""Discrete rotated Gaussian blur kernels and the generic random-Gaussian pool."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class GaussianKernelSpec:
    sigma_x: float
    sigma_y: float | None = None
    theta: float = 0.0
    support: int = 21

    def __post_init__(self):
        if self.sigma_y is None:
            object.__setattr__(self, "sigma_y", self.sigma_x)
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ConfigError("Gaussian sigmas must be positive")
        if self.support < 1 or self.support % 2 == 0:
            raise ConfigError(f"kernel support must be odd, got {self.support}")

    @property
    def kind(self) -> str:
        return "isotropic" if self.sigma_x == self.sigma_y else "anisotropic"


def gen_gaussian_kernel(spec: GaussianKernelSpec) -> np.ndarray:
    """Unit-sum Gaussian with std ``sigma_x`` along the axis rotated by ``theta``.

    Columns are x and rows are y; theta is measured counter-clockwise from +x
    in that frame.
    """
    half = spec.support // 2
    v, u = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    c, s = np.cos(spec.theta), np.sin(spec.theta)
    xr = c * u + s * v
    yr = -s * u + c * v
    k = np.exp(-0.5 * ((xr / spec.sigma_x) ** 2 + (yr / spec.sigma_y) ** 2))
    return k / k.sum()


def random_gaussian_spec(rng: np.random.Generator, support: int = 21, sigma_range=(0.2, 3.0),
                         isotropic_prob: float = 0.5) -> GaussianKernelSpec:
    """Draw a generic isotropic/anisotropic blur, as in common blind-SR pools."""
    lo, hi = sigma_range
    if rng.random() < isotropic_prob:
        sigma = rng.uniform(lo, hi)
        return GaussianKernelSpec(sigma, sigma, 0.0, support)
    return GaussianKernelSpec(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(0, np.pi), support)


def kernel_moments(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid (x, y) and 2x2 covariance of a kernel treated as a mass distribution."""
    half_r, half_c = k.shape[0] // 2, k.shape[1] // 2
    v, u = np.mgrid[-half_r:half_r + 1, -half_c:half_c + 1].astype(np.float64)
    m = k.sum()
    mx, my = (k * u).sum() / m, (k * v).sum() / m
    cov = np.array([
        [(k * (u - mx) ** 2).sum(), (k * (u - mx) * (v - my)).sum()],
        [(k * (u - mx) * (v - my)).sum(), (k * (v - my) ** 2).sum()],
    ]) / m
    return np.array([mx, my]), cov
