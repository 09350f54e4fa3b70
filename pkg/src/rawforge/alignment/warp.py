"""Bilinear perspective warp with exact derivatives w.r.t. the homography."""

from __future__ import annotations

import numpy as np

from .. import backend
from .._core_py import _bilinear_setup
from ..errors import GeometryError
from .homography import PARAM_INDEX, Homography


def _as_planes(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[None], True
    return np.moveaxis(img, -1, 0), False


def _from_planes(planes, was_2d):
    return planes[0] if was_2d else np.moveaxis(planes, 0, -1)


def warp(img, h: Homography, out_width: int, out_height: int, interp: str = "bilinear",
         return_jacobian: bool = False):
    """Resample ``img`` so that ``out(p) = img(H^-1 p)``.

    Returns ``(out, mask)``; samples falling outside the source are zero and
    flagged False in ``mask``.  With ``return_jacobian=True`` a third array of
    shape ``out.shape + (8,)`` holds d out / d h for the 8 free entries of H
    (row-major, ``h[2, 2] == 1``).
    """
    if interp != "bilinear":
        raise ValueError(f"unsupported interpolation {interp!r}")
    if not isinstance(h, Homography):
        h = Homography(h)
    try:
        G = np.linalg.inv(h.h)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("singular homography") from exc
    planes, was_2d = _as_planes(img)
    out, mask = backend.warp_bilinear(planes, G, out_height, out_width)
    if not return_jacobian:
        return _from_planes(out, was_2d), mask
    jac = _warp_jacobian(planes, G, out_height, out_width)
    jac = jac[0] if was_2d else np.moveaxis(jac, 0, -2)
    return _from_planes(out, was_2d), mask, jac


def _warp_jacobian(planes, G, out_h, out_w):
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    p = np.stack([xx, yy, np.ones_like(xx)])
    a, b, w = np.tensordot(G, p, axes=1)
    qx, qy = a / w, b / w
    valid, x0, y0, x1, y1, fx, fy = _bilinear_setup(planes, qx, qy)
    i00, i01 = planes[:, y0, x0], planes[:, y0, x1]
    i10, i11 = planes[:, y1, x0], planes[:, y1, x1]
    dIdx = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
    dIdy = (1 - fx) * (i10 - i00) + fx * (i11 - i01)
    jac = np.zeros((planes.shape[0], out_h, out_w, 8))
    for k, (i, j) in enumerate(PARAM_INDEX):
        # dG = -G E_ij G for a unit perturbation of H[i, j].
        M = -np.outer(G[:, i], G[j, :])
        mp = np.tensordot(M, p, axes=1)
        dqx = (mp[0] - qx * mp[2]) / w
        dqy = (mp[1] - qy * mp[2]) / w
        jac[..., k] = np.where(valid, dIdx * dqx + dIdy * dqy, 0.0)
    return jac


def grad_wrt_h(G: np.ndarray, grad_G: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. ``G = H^-1`` onto the 8 free entries of H."""
    full = -G.T @ grad_G @ G.T
    return np.array([full[i, j] for i, j in PARAM_INDEX])
