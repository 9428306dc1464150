"""Differentiable operations over :class:`abhe.tensor.Tensor`.

Every op computes its forward value with numpy (hot kernels live in
:mod:`abhe.kernels`) and registers a VJP closure on the active tape via
``record_op``. Broadcasting from extent 1 is allowed for the pointwise
ops; gradients are summed back down to the operand shape.

Conventions:
  * images are [B, H, W, C] (channels last), row-major
  * reductions with ``axis=None`` produce a scalar (shape ``()``)
  * max-reduction gradients go to the first maximal element
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, record_op


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# pointwise arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data + b.data, dtype=(a.data + b.data).dtype)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op(out, [a, b], vjp)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data - b.data, dtype=(a.data - b.data).dtype)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op(out, [a, b], vjp)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data * b.data, dtype=(a.data * b.data).dtype)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op(out, [a, b], vjp)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data / b.data, dtype=(a.data / b.data).dtype)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record_op(out, [a, b], vjp)


def neg(a) -> Tensor:
    a = _t(a)
    out = Tensor(-a.data, dtype=a.dtype)
    return record_op(out, [a], lambda g: (-g,))


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar (no gradient w.r.t. the scalar)."""
    a = _t(a)
    s = a.dtype.type(s)
    out = Tensor(a.data * s, dtype=a.dtype)
    return record_op(out, [a], lambda g: (g * s,))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0  # gradient at exactly 0 is defined as 0
    out = Tensor(np.where(mask, a.data, a.dtype.type(0)), dtype=a.dtype)
    return record_op(out, [a], lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _t(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, dtype=a.dtype)
    return record_op(out, [a], lambda g: (g * y * (1.0 - y),))


def sqrt(a) -> Tensor:
    a = _t(a)
    y = np.sqrt(a.data)
    out = Tensor(y, dtype=a.dtype)
    return record_op(out, [a], lambda g: (g / (2.0 * y),))


def absolute(a) -> Tensor:
    a = _t(a)
    s = np.sign(a.data)
    out = Tensor(np.abs(a.data), dtype=a.dtype)
    return record_op(out, [a], lambda g: (g * s,))


def l1_distance(a, b) -> Tensor:
    """Mean absolute difference (scalar)."""
    return mean(absolute(sub(a, b)))


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    axis = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record_op(out, [a], vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    axis = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), dtype=a.dtype)
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in axis]))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / count,)

    return record_op(out, [a], vjp)


def amax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximum."""
    a = _t(a)
    ax = axis % a.ndim
    out_data = a.data.max(axis=ax, keepdims=keepdims)
    idx = a.data.argmax(axis=ax)  # argmax returns the first maximal index
    out = Tensor(out_data, dtype=a.dtype)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        gg = np.zeros_like(a.data)
        np.put_along_axis(gg, np.expand_dims(idx, ax), g, axis=ax)
        return (gg,)

    return record_op(out, [a], vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product [.., m, k] @ [.., k, n]; leading dims broadcast."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} @ {b.shape}") from e
    out = Tensor(out_data, dtype=out_data.dtype)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op(out, [a, b], vjp)


def _conv_geometry(h, w, kh, kw, sh, sw, padding):
    if padding == "same":
        oh = -(-h // sh)
        ow = -(-w // sw)
        ph = max((oh - 1) * sh + kh - h, 0)
        pw = max((ow - 1) * sw + kw - w, 0)
        pads = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    elif padding == "valid":
        if h < kh or w < kw:
            raise ShapeError(f"valid conv needs input >= kernel, got {(h, w)} vs {(kh, kw)}")
        oh = (h - kh) // sh + 1
        ow = (w - kw) // sw + 1
        pads = (0, 0, 0, 0)
    else:
        raise ShapeError(f"padding must be 'same' or 'valid', got {padding!r}")
    return oh, ow, pads


def conv2d(x, kernel, stride=1, padding: str = "same") -> Tensor:
    """Cross-correlation of [B,H,W,Cin] with [kh,kw,Cin,Cout]."""
    x, kernel = _t(x), _t(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input and kernel, got {x.shape}, {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[3]} vs kernel {cin}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    b, h, w, _ = x.shape
    oh, ow, (pt, pb, pl, pr) = _conv_geometry(h, w, kh, kw, sh, sw, padding)
    xpad = np.ascontiguousarray(
        np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    )
    cols = kernels.im2col(xpad, kh, kw, sh, sw, oh, ow)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out_data = cols.reshape(b * oh * ow, -1) @ kmat
    out = Tensor(out_data.reshape(b, oh, ow, cout), dtype=x.dtype)

    def vjp(g):
        gmat = g.reshape(b * oh * ow, cout)
        dk = (cols.reshape(b * oh * ow, -1).T @ gmat).reshape(kernel.shape)
        dcols = (gmat @ kmat.T).reshape(b, oh, ow, -1)
        dxpad = kernels.col2im(np.ascontiguousarray(dcols), xpad.shape[1], xpad.shape[2], kh, kw, sh, sw)
        dx = dxpad[:, pt:pt + h, pl:pl + w, :]
        return np.ascontiguousarray(dx), dk

    return record_op(out, [x, kernel], vjp)


def box_filter3(x) -> Tensor:
    """Depthwise 3x3 unit-mean average with zero padding (self-adjoint)."""
    x = _t(x)

    def _box(a):
        pad = np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)))
        acc = np.zeros_like(a)
        for di in range(3):
            for dj in range(3):
                acc += pad[:, di:di + a.shape[1], dj:dj + a.shape[2], :]
        return acc / 9.0

    out = Tensor(_box(x.data), dtype=x.dtype)
    return record_op(out, [x], lambda g: (_box(g),))


def avg_pool2d(x, k: int) -> Tensor:
    """Non-overlapping k x k mean pooling of [B,H,W,C]; H,W divisible by k."""
    x = _t(x)
    b, h, w, c = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: extents {(h, w)} not divisible by {k}")
    oh, ow = h // k, w // k
    out_data = x.data.reshape(b, oh, k, ow, k, c).mean(axis=(2, 4))
    out = Tensor(out_data, dtype=x.dtype)

    def vjp(g):
        gg = np.broadcast_to(
            g[:, :, None, :, None, :] / (k * k), (b, oh, k, ow, k, c)
        )
        return (gg.reshape(b, h, w, c).copy(),)

    return record_op(out, [x], vjp)


# ---------------------------------------------------------------------------
# normalization and attention primitives


def softmax_scaled(x, k: float = 1.0) -> Tensor:
    """softmax(k * x) along the last axis, max-subtracted for stability."""
    if k <= 0:
        raise ValueError(f"softmax temperature must be positive, got {k}")
    x = _t(x)
    z = x.dtype.type(k) * x.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, dtype=x.dtype)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (x.dtype.type(k) * y * (g - inner),)

    return record_op(out, [x], vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = Tensor(gamma.data * xhat + beta.data, dtype=x.dtype)
    n = x.shape[-1]

    def vjp(g):
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return record_op(out, [x, gamma, beta], vjp)


def bilinear_sample(img, grid) -> Tensor:
    """Sample [B,H,W,C] at pixel coords grid [B,H',W',2] ((x, y) order).

    Coordinates outside [0, W-1] x [0, H-1] produce exactly 0; neighbours
    beyond the border contribute 0 inside the valid rectangle (zero
    border). Differentiable w.r.t. both the image and the grid.
    """
    img, grid = _t(img), _t(grid)
    if img.ndim != 4 or grid.ndim != 4 or grid.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample needs [B,H,W,C] and [B,H',W',2], got {img.shape}, {grid.shape}")
    if img.shape[0] != grid.shape[0]:
        raise ShapeError("bilinear_sample batch extents disagree")
    b, h, w, c = img.shape
    _, gh, gw, _ = grid.shape
    n = gh * gw
    gflat = grid.data.reshape(b, n, 2)
    gx = np.ascontiguousarray(gflat[:, :, 0])
    gy = np.ascontiguousarray(gflat[:, :, 1])
    inside = (
        (gx >= 0) & (gx <= w - 1) & (gy >= 0) & (gy <= h - 1)
    ).astype(img.dtype)
    raw = kernels.bilinear_gather(np.ascontiguousarray(img.data), gx, gy)
    out = Tensor((raw * inside[:, :, None]).reshape(b, gh, gw, c), dtype=img.dtype)

    def vjp(g):
        geff = np.ascontiguousarray(g.reshape(b, n, c) * inside[:, :, None])
        dimg, dgx, dgy = kernels.bilinear_backward(
            np.ascontiguousarray(img.data), gx, gy, geff
        )
        dgrid = np.stack([dgx, dgy], axis=-1).reshape(grid.shape)
        return dimg, dgrid

    return record_op(out, [img, grid], vjp)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x, shape) -> Tensor:
    x = _t(x)
    out = Tensor(x.data.reshape(shape), dtype=x.dtype)
    return record_op(out, [x], lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = _t(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes), dtype=x.dtype)
    return record_op(out, [x], lambda g: (g.transpose(inv),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_t(t) for t in tensors]
    ax = axis % ts[0].ndim
    out = Tensor(np.concatenate([t.data for t in ts], axis=ax), dtype=ts[0].dtype)
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return record_op(out, ts, vjp)


def roll2d(x, shift_y: int, shift_x: int) -> Tensor:
    """Cyclic shift of the two spatial axes of [B,H,W,C]."""
    x = _t(x)
    out = Tensor(np.roll(x.data, (shift_y, shift_x), axis=(1, 2)), dtype=x.dtype)
    return record_op(out, [x], lambda g: (np.roll(g, (-shift_y, -shift_x), axis=(1, 2)),))


def gather_rows(table, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` with scatter-add gradient into the table."""
    table = _t(table)
    idx = np.asarray(index, dtype=np.int64)
    out = Tensor(table.data[idx], dtype=table.dtype)

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return record_op(out, [table], vjp)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias). x: [.., in], weight: [in, out], bias: [out]."""
    y = matmul(x, weight)
    if bias is not None:
        y = add(y, bias)
    return y
