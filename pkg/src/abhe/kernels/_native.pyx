# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: patch unfolding and bilinear sampling.

Contracts match ``numpy_backend`` exactly; both dtypes (f32/f64) are
supported via fused types. All loops are single-threaded so results are
bit-deterministic.
"""

import numpy as np

cimport cython
from libc.math cimport floor


ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xpad, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b = xpad.shape[0], c = xpad.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b, oh, ow, kh * kw * c), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ib, i, j, di, dj, ch, slot
    for ib in range(b):
        for i in range(oh):
            for j in range(ow):
                slot = 0
                for di in range(kh):
                    for dj in range(kw):
                        for ch in range(c):
                            out[ib, i, j, slot] = xpad[ib, i * sh + di, j * sw + dj, ch]
                            slot += 1
    return out_arr


def col2im(real[:, :, :, ::1] cols, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t b = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3] // (kh * kw)
    dtype = np.float32 if real is float else np.float64
    xpad_arr = np.zeros((b, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] xpad = xpad_arr
    cdef Py_ssize_t ib, i, j, di, dj, ch, slot
    for ib in range(b):
        for i in range(oh):
            for j in range(ow):
                slot = 0
                for di in range(kh):
                    for dj in range(kw):
                        for ch in range(c):
                            xpad[ib, i * sh + di, j * sw + dj, ch] += cols[ib, i, j, slot]
                            slot += 1
    return xpad_arr


def bilinear_gather(real[:, :, :, ::1] img, real[:, ::1] gx, real[:, ::1] gy):
    cdef Py_ssize_t b = img.shape[0], h = img.shape[1], w = img.shape[2], c = img.shape[3]
    cdef Py_ssize_t n = gx.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((b, n, c), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t ib, k, ch, x0, y0
    cdef real x, y, fx, fy, w00, w01, w10, w11
    cdef bint v00, v01, v10, v11
    for ib in range(b):
        for k in range(n):
            x = gx[ib, k]
            y = gy[ib, k]
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            fx = x - x0
            fy = y - y0
            w00 = (1 - fy) * (1 - fx)
            w01 = (1 - fy) * fx
            w10 = fy * (1 - fx)
            w11 = fy * fx
            v00 = 0 <= x0 < w and 0 <= y0 < h
            v01 = 0 <= x0 + 1 < w and 0 <= y0 < h
            v10 = 0 <= x0 < w and 0 <= y0 + 1 < h
            v11 = 0 <= x0 + 1 < w and 0 <= y0 + 1 < h
            for ch in range(c):
                out[ib, k, ch] = (
                    (img[ib, y0, x0, ch] * w00 if v00 else 0)
                    + (img[ib, y0, x0 + 1, ch] * w01 if v01 else 0)
                    + (img[ib, y0 + 1, x0, ch] * w10 if v10 else 0)
                    + (img[ib, y0 + 1, x0 + 1, ch] * w11 if v11 else 0)
                )
    return out_arr


def bilinear_backward(real[:, :, :, ::1] img, real[:, ::1] gx, real[:, ::1] gy,
                      real[:, :, ::1] gout):
    cdef Py_ssize_t b = img.shape[0], h = img.shape[1], w = img.shape[2], c = img.shape[3]
    cdef Py_ssize_t n = gx.shape[1]
    dtype = np.float32 if real is float else np.float64
    dimg_arr = np.zeros((b, h, w, c), dtype=dtype)
    dgx_arr = np.zeros((b, n), dtype=dtype)
    dgy_arr = np.zeros((b, n), dtype=dtype)
    cdef real[:, :, :, ::1] dimg = dimg_arr
    cdef real[:, ::1] dgx = dgx_arr
    cdef real[:, ::1] dgy = dgy_arr
    cdef Py_ssize_t ib, k, ch, x0, y0
    cdef real x, y, fx, fy, g, v, ax, ay
    cdef bint v00, v01, v10, v11
    for ib in range(b):
        for k in range(n):
            x = gx[ib, k]
            y = gy[ib, k]
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            fx = x - x0
            fy = y - y0
            v00 = 0 <= x0 < w and 0 <= y0 < h
            v01 = 0 <= x0 + 1 < w and 0 <= y0 < h
            v10 = 0 <= x0 < w and 0 <= y0 + 1 < h
            v11 = 0 <= x0 + 1 < w and 0 <= y0 + 1 < h
            ax = 0
            ay = 0
            for ch in range(c):
                g = gout[ib, k, ch]
                if v00:
                    v = img[ib, y0, x0, ch]
                    dimg[ib, y0, x0, ch] += (1 - fy) * (1 - fx) * g
                    ax += -(1 - fy) * g * v
                    ay += -(1 - fx) * g * v
                if v01:
                    v = img[ib, y0, x0 + 1, ch]
                    dimg[ib, y0, x0 + 1, ch] += (1 - fy) * fx * g
                    ax += (1 - fy) * g * v
                    ay += -fx * g * v
                if v10:
                    v = img[ib, y0 + 1, x0, ch]
                    dimg[ib, y0 + 1, x0, ch] += fy * (1 - fx) * g
                    ax += -fy * g * v
                    ay += (1 - fx) * g * v
                if v11:
                    v = img[ib, y0 + 1, x0 + 1, ch]
                    dimg[ib, y0 + 1, x0 + 1, ch] += fy * fx * g
                    ax += fy * g * v
                    ay += fx * g * v
            dgx[ib, k] = ax
            dgy[ib, k] = ay
    return dimg_arr, dgx_arr, dgy_arr
