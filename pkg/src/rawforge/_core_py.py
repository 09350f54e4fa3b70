"""Pure-numpy implementations of the hot kernels.

Used when the compiled ``_core`` extension is unavailable; the two must agree
to floating-point round-off (see tests/test_backend.py).

Conventions shared with ``_core.pyx``:

* ``x_hr`` is ``(3, H, W)`` float64, ``kernels`` is ``(3, K, K)`` float64.
* The HR blur is a true 2-D convolution with "valid" support, so the blurred
  plane has shape ``(H - K + 1, W - K + 1)``.
* LR pixel ``(i, j)`` samples the blurred plane at ``(s*i + phase, s*j + phase)``
  in channel ``cmap[i % 2, j % 2]``.
* Warps map output pixel ``(row, col)`` through ``G`` (output -> source) as
  ``G @ (col, row, 1)`` and sample the source bilinearly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal


def _sites(n_rows, n_cols, s, phase, cmap, c):
    ii, jj = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    sel = cmap[ii % 2, jj % 2] == c
    return ii[sel], jj[sel], ii[sel] * s + phase, jj[sel] * s + phase


def render_lr(x_hr, kernels, s, phase, cmap, n_rows, n_cols):
    K = kernels.shape[1]
    out = np.zeros((n_rows, n_cols), dtype=np.float64)
    for c in range(3):
        ii, jj, rr, cc = _sites(n_rows, n_cols, s, phase, cmap, c)
        win = sliding_window_view(x_hr[c], (K, K))[rr, cc]
        out[ii, jj] = np.einsum("nab,ab->n", win, kernels[c, ::-1, ::-1])
    return out


def render_lr_adjoint(x_hr, kernels, g, s, phase, cmap, need_grad_x=True):
    K = kernels.shape[1]
    n_rows, n_cols = g.shape
    grad_k = np.zeros_like(kernels)
    grad_x = np.zeros_like(x_hr) if need_grad_x else None
    conv_shape = (x_hr.shape[1] - K + 1, x_hr.shape[2] - K + 1)
    for c in range(3):
        ii, jj, rr, cc = _sites(n_rows, n_cols, s, phase, cmap, c)
        win = sliding_window_view(x_hr[c], (K, K))[rr, cc]
        grad_k[c] = np.einsum("nab,n->ab", win, g[ii, jj])[::-1, ::-1]
        if need_grad_x:
            sparse = np.zeros(conv_shape)
            sparse[rr, cc] = g[ii, jj]
            grad_x[c] = signal.convolve(sparse, kernels[c, ::-1, ::-1], mode="full")
    return grad_k, grad_x


def _project(G, out_h, out_w):
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    a = G[0, 0] * xx + G[0, 1] * yy + G[0, 2]
    b = G[1, 0] * xx + G[1, 1] * yy + G[1, 2]
    w = G[2, 0] * xx + G[2, 1] * yy + G[2, 2]
    return xx, yy, a, b, w


def _bilinear_setup(img, qx, qy):
    _, hi, wi = img.shape
    valid = (qx >= 0) & (qx <= wi - 1) & (qy >= 0) & (qy <= hi - 1)
    qxc = np.where(valid, qx, 0.0)
    qyc = np.where(valid, qy, 0.0)
    x0 = np.minimum(np.floor(qxc).astype(np.intp), max(wi - 2, 0))
    y0 = np.minimum(np.floor(qyc).astype(np.intp), max(hi - 2, 0))
    x1 = np.minimum(x0 + 1, wi - 1)
    y1 = np.minimum(y0 + 1, hi - 1)
    fx = qxc - x0
    fy = qyc - y0
    return valid, x0, y0, x1, y1, fx, fy


def warp_bilinear(img, G, out_h, out_w):
    _, _, a, b, w = _project(G, out_h, out_w)
    with np.errstate(divide="ignore", invalid="ignore"):
        qx, qy = a / w, b / w
    qx = np.where(np.isfinite(qx), qx, -1.0)
    qy = np.where(np.isfinite(qy), qy, -1.0)
    valid, x0, y0, x1, y1, fx, fy = _bilinear_setup(img, qx, qy)
    i00, i01 = img[:, y0, x0], img[:, y0, x1]
    i10, i11 = img[:, y1, x0], img[:, y1, x1]
    out = (1 - fy) * ((1 - fx) * i00 + fx * i01) + fy * ((1 - fx) * i10 + fx * i11)
    out = np.where(valid, out, 0.0)
    return out, valid


def warp_bilinear_vjp(img, G, upstream):
    """Gradient of ``sum(upstream * warp(img, G))`` w.r.t. the 9 entries of G."""
    out_h, out_w = upstream.shape[1:]
    xx, yy, a, b, w = _project(G, out_h, out_w)
    with np.errstate(divide="ignore", invalid="ignore"):
        qx, qy = a / w, b / w
    qx = np.where(np.isfinite(qx), qx, -1.0)
    qy = np.where(np.isfinite(qy), qy, -1.0)
    valid, x0, y0, x1, y1, fx, fy = _bilinear_setup(img, qx, qy)
    i00, i01 = img[:, y0, x0], img[:, y0, x1]
    i10, i11 = img[:, y1, x0], img[:, y1, x1]
    dqx = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
    dqy = (1 - fx) * (i10 - i00) + fx * (i11 - i01)
    gx = np.where(valid, (upstream * dqx).sum(axis=0), 0.0)
    gy = np.where(valid, (upstream * dqy).sum(axis=0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_w = np.where(valid, 1.0 / w, 0.0)
    p = (xx, yy, np.ones_like(xx))
    grad = np.empty((3, 3))
    for k in range(3):
        grad[0, k] = np.sum(gx * inv_w * p[k])
        grad[1, k] = np.sum(gy * inv_w * p[k])
        grad[2, k] = -np.sum((gx * qx + gy * qy) * inv_w * p[k] * valid)
    return grad
