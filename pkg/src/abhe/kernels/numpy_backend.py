"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled backend in ``_native.pyx``; used when the
extension is unavailable or when ``ABHE_BACKEND=numpy`` forces it. The
scatter-type kernels (col2im, bilinear_backward) are the slow spots here:
numpy has no fast scatter-add, so they loop over the small kernel window
or fall back to ``np.add.at``.
"""

from __future__ import annotations

import numpy as np


def im2col(xpad: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Unfold padded [B,Hp,Wp,C] into [B,OH,OW,kh*kw*C] patch rows."""
    b, hp, wp, c = xpad.shape
    out = np.empty((b, oh, ow, kh * kw * c), dtype=xpad.dtype)
    for di in range(kh):
        for dj in range(kw):
            slot = (di * kw + dj) * c
            out[:, :, :, slot:slot + c] = xpad[:, di:di + oh * sh:sh, dj:dj + ow * sw:sw, :]
    return out


def col2im(cols: np.ndarray, hp: int, wp: int, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch rows back into [B,Hp,Wp,C]."""
    b, oh, ow, k = cols.shape
    c = k // (kh * kw)
    xpad = np.zeros((b, hp, wp, c), dtype=cols.dtype)
    for di in range(kh):
        for dj in range(kw):
            slot = (di * kw + dj) * c
            xpad[:, di:di + oh * sh:sh, dj:dj + ow * sw:sw, :] += cols[:, :, :, slot:slot + c]
    return xpad


def _corner_data(img, gx, gy):
    b, h, w, c = img.shape
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx = gx - x0
    fy = gy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xc = np.clip(xi, 0, w - 1)
            yc = np.clip(yi, 0, h - 1)
            corners.append((xc, yc, valid.astype(img.dtype)))
    return x0, y0, fx, fy, corners


def bilinear_gather(img: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Sample [B,H,W,C] at continuous pixel coords gx,gy [B,N] -> [B,N,C].

    Out-of-range neighbours contribute zero (virtual zero padding).
    """
    b, h, w, c = img.shape
    _, _, fx, fy, corners = _corner_data(img, gx, gy)
    bi = np.arange(b)[:, None]
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    out = np.zeros((b, gx.shape[1], c), dtype=img.dtype)
    for wgt, (xc, yc, valid) in zip((w00, w01, w10, w11), corners):
        out += (wgt * valid)[:, :, None] * img[bi, yc, xc, :]
    return out


def bilinear_backward(img: np.ndarray, gx: np.ndarray, gy: np.ndarray, gout: np.ndarray):
    """VJP of bilinear_gather: returns (d_img, d_gx, d_gy)."""
    b, h, w, c = img.shape
    _, _, fx, fy, corners = _corner_data(img, gx, gy)
    bi = np.arange(b)[:, None]
    weights = ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)
    # d/dfx and d/dfy of each corner weight, in the same corner order
    dwx = (-(1 - fy), (1 - fy), -fy, fy)
    dwy = (-(1 - fx), -fx, (1 - fx), fx)
    dimg = np.zeros_like(img)
    dgx = np.zeros_like(gx)
    dgy = np.zeros_like(gy)
    for wgt, dx_, dy_, (xc, yc, valid) in zip(weights, dwx, dwy, corners):
        gdot = np.einsum("bnc,bnc->bn", gout, img[bi, yc, xc, :])
        dgx += dx_ * valid * gdot
        dgy += dy_ * valid * gdot
        np.add.at(dimg, (bi, yc, xc), (wgt * valid)[:, :, None] * gout)
    return dimg, dgx, dgy
