# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; semantics documented in ``_core_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, isfinite

cnp.import_array()


def render_lr(double[:, :, ::1] x_hr, double[:, :, ::1] kernels, Py_ssize_t s,
              Py_ssize_t phase, Py_ssize_t[:, ::1] cmap, Py_ssize_t n_rows, Py_ssize_t n_cols):
    cdef Py_ssize_t K = kernels.shape[1]
    cdef Py_ssize_t i, j, u, v, c, r0, c0
    cdef double acc
    out = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n_rows):
        for j in range(n_cols):
            c = cmap[i & 1, j & 1]
            r0 = s * i + phase + K - 1
            c0 = s * j + phase + K - 1
            acc = 0.0
            for u in range(K):
                for v in range(K):
                    acc += kernels[c, u, v] * x_hr[c, r0 - u, c0 - v]
            o[i, j] = acc
    return out


def render_lr_adjoint(double[:, :, ::1] x_hr, double[:, :, ::1] kernels, double[:, ::1] g,
                      Py_ssize_t s, Py_ssize_t phase, Py_ssize_t[:, ::1] cmap, bint need_grad_x=True):
    cdef Py_ssize_t K = kernels.shape[1]
    cdef Py_ssize_t n_rows = g.shape[0], n_cols = g.shape[1]
    cdef Py_ssize_t i, j, u, v, c, r0, c0
    cdef double gij
    grad_k = np.zeros((3, K, K), dtype=np.float64)
    cdef double[:, :, ::1] gk = grad_k
    cdef double[:, :, ::1] gx
    if need_grad_x:
        grad_x = np.zeros((x_hr.shape[0], x_hr.shape[1], x_hr.shape[2]), dtype=np.float64)
        gx = grad_x
    else:
        grad_x = None
    for i in range(n_rows):
        for j in range(n_cols):
            gij = g[i, j]
            if gij == 0.0:
                continue
            c = cmap[i & 1, j & 1]
            r0 = s * i + phase + K - 1
            c0 = s * j + phase + K - 1
            for u in range(K):
                for v in range(K):
                    gk[c, u, v] += gij * x_hr[c, r0 - u, c0 - v]
            if need_grad_x:
                for u in range(K):
                    for v in range(K):
                        gx[c, r0 - u, c0 - v] += gij * kernels[c, u, v]
    return grad_k, grad_x


cdef inline bint _sample_setup(double qx, double qy, Py_ssize_t hi, Py_ssize_t wi,
                               Py_ssize_t* x0, Py_ssize_t* y0, Py_ssize_t* x1, Py_ssize_t* y1,
                               double* fx, double* fy) nogil:
    if not (isfinite(qx) and isfinite(qy)):
        return False
    if qx < 0 or qx > wi - 1 or qy < 0 or qy > hi - 1:
        return False
    x0[0] = <Py_ssize_t>floor(qx)
    y0[0] = <Py_ssize_t>floor(qy)
    if x0[0] > wi - 2:
        x0[0] = wi - 2 if wi >= 2 else 0
    if y0[0] > hi - 2:
        y0[0] = hi - 2 if hi >= 2 else 0
    x1[0] = x0[0] + 1 if x0[0] + 1 < wi else wi - 1
    y1[0] = y0[0] + 1 if y0[0] + 1 < hi else hi - 1
    fx[0] = qx - x0[0]
    fy[0] = qy - y0[0]
    return True


def warp_bilinear(double[:, :, ::1] img, double[:, ::1] G, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t C = img.shape[0], hi = img.shape[1], wi = img.shape[2]
    cdef Py_ssize_t r, col, ch, x0, y0, x1, y1
    cdef double a, b, w, qx, qy, fx, fy
    out = np.zeros((C, out_h, out_w), dtype=np.float64)
    mask = np.zeros((out_h, out_w), dtype=np.bool_)
    cdef double[:, :, ::1] o = out
    cdef cnp.npy_bool[:, ::1] m = mask
    for r in range(out_h):
        for col in range(out_w):
            a = G[0, 0] * col + G[0, 1] * r + G[0, 2]
            b = G[1, 0] * col + G[1, 1] * r + G[1, 2]
            w = G[2, 0] * col + G[2, 1] * r + G[2, 2]
            qx = a / w
            qy = b / w
            if not _sample_setup(qx, qy, hi, wi, &x0, &y0, &x1, &y1, &fx, &fy):
                continue
            m[r, col] = True
            for ch in range(C):
                o[ch, r, col] = ((1 - fy) * ((1 - fx) * img[ch, y0, x0] + fx * img[ch, y0, x1])
                                 + fy * ((1 - fx) * img[ch, y1, x0] + fx * img[ch, y1, x1]))
    return out, mask


def warp_bilinear_vjp(double[:, :, ::1] img, double[:, ::1] G, double[:, :, ::1] upstream):
    cdef Py_ssize_t C = img.shape[0], hi = img.shape[1], wi = img.shape[2]
    cdef Py_ssize_t out_h = upstream.shape[1], out_w = upstream.shape[2]
    cdef Py_ssize_t r, col, ch, x0, y0, x1, y1, k
    cdef double a, b, w, qx, qy, fx, fy, gx, gy, inv_w, up
    cdef double p[3]
    cdef double acc[9]
    for k in range(9):
        acc[k] = 0.0
    for r in range(out_h):
        for col in range(out_w):
            a = G[0, 0] * col + G[0, 1] * r + G[0, 2]
            b = G[1, 0] * col + G[1, 1] * r + G[1, 2]
            w = G[2, 0] * col + G[2, 1] * r + G[2, 2]
            qx = a / w
            qy = b / w
            if not _sample_setup(qx, qy, hi, wi, &x0, &y0, &x1, &y1, &fx, &fy):
                continue
            gx = 0.0
            gy = 0.0
            for ch in range(C):
                up = upstream[ch, r, col]
                if up == 0.0:
                    continue
                gx += up * ((1 - fy) * (img[ch, y0, x1] - img[ch, y0, x0])
                            + fy * (img[ch, y1, x1] - img[ch, y1, x0]))
                gy += up * ((1 - fx) * (img[ch, y1, x0] - img[ch, y0, x0])
                            + fx * (img[ch, y1, x1] - img[ch, y0, x1]))
            if gx == 0.0 and gy == 0.0:
                continue
            inv_w = 1.0 / w
            p[0] = col
            p[1] = r
            p[2] = 1.0
            for k in range(3):
                acc[k] += gx * inv_w * p[k]
                acc[3 + k] += gy * inv_w * p[k]
                acc[6 + k] -= (gx * qx + gy * qy) * inv_w * p[k]
    grad = np.empty((3, 3), dtype=np.float64)
    for k in range(9):
        grad[k // 3, k % 3] = acc[k]
    return grad
