"""Homography container and normalised DLT / RANSAC fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import FitError, GeometryError

log = logging.getLogger(__name__)

# Parameter order used everywhere: row-major entries with h[2, 2] fixed to 1.
PARAM_INDEX = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)]


class Homography:
    """3x3 projective map normalised so that ``h[2, 2] == 1``."""

    def __init__(self, h):
        h = np.array(h, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(h)) or abs(h[2, 2]) < 1e-300:
            raise GeometryError("homography must be finite with a non-zero h[2, 2]")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-12:
            raise GeometryError("homography is singular")
        self.h = h

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls([[1, 0, dx], [0, 1, dy], [0, 0, 1]])

    @classmethod
    def from_params(cls, p) -> "Homography":
        h = np.ones((3, 3))
        for v, (i, j) in zip(p, PARAM_INDEX):
            h[i, j] = v
        return cls(h)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.h[i, j] for i, j in PARAM_INDEX])

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)

    def apply(self, pts) -> np.ndarray:
        """Map ``(n, 2)`` xy points."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        ph = np.c_[pts, np.ones(len(pts))] @ self.h.T
        return ph[:, :2] / ph[:, 2:3]

    def to_dict(self) -> dict:
        return {"h": self.h.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Homography":
        return cls(d["h"])

    def __repr__(self):
        return f"Homography({np.array2string(self.h, precision=6)})"


def reprojection_error(h_a: Homography, h_b: Homography, width: float, height: float, step: float = 1.0) -> float:
    """Mean distance between the images of a pixel grid under two homographies."""
    yy, xx = np.mgrid[0:height:step, 0:width:step]
    pts = np.c_[xx.ravel(), yy.ravel()]
    return float(np.mean(np.linalg.norm(h_a.apply(pts) - h_b.apply(pts), axis=1)))


@dataclass
class CorrespondenceSet:
    """Paired sensor/display subpixel coordinates with per-pair confidence."""

    sensor_xy: np.ndarray
    display_xy: np.ndarray
    confidence: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sensor_xy = np.asarray(self.sensor_xy, dtype=np.float64).reshape(-1, 2)
        self.display_xy = np.asarray(self.display_xy, dtype=np.float64).reshape(-1, 2)
        if len(self.sensor_xy) != len(self.display_xy):
            raise ValueError("sensor and display point counts differ")
        if self.confidence is None:
            self.confidence = np.ones(len(self.sensor_xy))
        self.confidence = np.clip(np.asarray(self.confidence, dtype=np.float64), 0.0, 1.0)

    def __len__(self):
        return len(self.sensor_xy)

    def to_dict(self) -> dict:
        return {
            "sensor_xy": self.sensor_xy.tolist(),
            "display_xy": self.display_xy.tolist(),
            "confidence": self.confidence.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "CorrespondenceSet":
        return cls(d["sensor_xy"], d["display_xy"], d.get("confidence"))


def _normalizer(pts):
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if mean_dist < 1e-12:
        raise FitError("all points coincide")
    scale = np.sqrt(2.0) / mean_dist
    return np.array([[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1]])


def dlt(src, dst, weights=None) -> np.ndarray:
    """Hartley-normalised DLT solving ``dst ~ H src``; returns a 3x3 array."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4:
        raise FitError(f"need at least 4 correspondences, got {len(src)}")
    ts, td = _normalizer(src), _normalizer(dst)
    s = np.c_[src, np.ones(len(src))] @ ts.T
    d = np.c_[dst, np.ones(len(dst))] @ td.T
    n = len(s)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = s
    A[0::2, 6:9] = -d[:, 0:1] * s
    A[1::2, 3:6] = s
    A[1::2, 6:9] = -d[:, 1:2] * s
    if weights is not None:
        A *= np.repeat(np.sqrt(np.asarray(weights, dtype=np.float64)), 2)[:, None]
    if len(A) < 9:
        # A minimal 4-point system is 8x9; a zero row keeps the null vector in vt.
        A = np.vstack([A, np.zeros((9 - len(A), 9))])
    _, sv, vt = np.linalg.svd(A, full_matrices=False)
    # Collinear or repeated points leave a multi-dimensional null space.
    if sv[-2] < 1e-9 * sv[0]:
        raise FitError("degenerate point configuration (collinear or repeated points)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-15:
        raise FitError("fitted homography maps the origin to infinity")
    return h / h[2, 2]


def _residuals(h, src, dst):
    ph = np.c_[src, np.ones(len(src))] @ h.T
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = ph[:, :2] / ph[:, 2:3]
    err = np.linalg.norm(proj - dst, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def fit_homography(c: CorrespondenceSet, ransac: bool = False, threshold: float = 1.0,
                   iterations: int = 1000, seed: int = 0, direction: str = "display_to_sensor") -> Homography:
    """Least-squares homography from correspondences, optionally with RANSAC.

    ``direction="display_to_sensor"`` (default) maps display coordinates onto
    sensor coordinates.  RANSAC draws minimal 4-point samples, keeps the largest
    inlier set (reprojection error below ``threshold`` sensor pixels) and refits
    on all inliers.
    """
    if direction == "display_to_sensor":
        src, dst = c.display_xy, c.sensor_xy
    elif direction == "sensor_to_display":
        src, dst = c.sensor_xy, c.display_xy
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if len(src) < 4:
        raise FitError(f"need at least 4 correspondences, got {len(src)}")
    weights = c.confidence
    if not ransac:
        return Homography(dlt(src, dst, weights))

    rng = np.random.default_rng(seed)
    n = len(src)
    best = None
    best_count = 0
    for _ in range(iterations):
        idx = rng.choice(n, 4, replace=False)
        try:
            h = dlt(src[idx], dst[idx])
        except (FitError, np.linalg.LinAlgError):
            continue
        inliers = _residuals(h, src, dst) < threshold
        count = int(inliers.sum())
        if count > best_count:
            best, best_count = inliers, count
            if count == n:
                break
    if best is None or best_count < 4:
        raise FitError("RANSAC found no consensus set")
    h = dlt(src[best], dst[best], weights[best])
    # One re-selection pass with the refined model.
    inliers = _residuals(h, src, dst) < threshold
    if inliers.sum() >= 4:
        h = dlt(src[inliers], dst[inliers], weights[inliers])
    log.debug("RANSAC kept %d/%d inliers", int(inliers.sum()), n)
    return Homography(h)
