"""Homographies from corner offsets, differentiable warping, cascade math.

A homography is a [.., 3, 3] array/tensor normalized to H[2,2] == 1,
mapping pixel coordinates of the source frame onto the target frame.
``warp(img, H)`` is inverse warping: output pixel p samples ``img`` at
H^-1 p. Corner offsets are 8 scalars (dx0,dy0,..,dx3,dy3) for the patch
corners in order TL, TR, BR, BL, in full-resolution pixel units.

The 4-point solve runs in float64 on a corner frame normalized to
[-1, 1] for conditioning (invisible at the interface), with Gaussian
elimination and partial pivoting so the backward pass can reuse the
same routine on the transposed system.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, record_op


class DegenerateHomographyError(ArithmeticError):
    """Displaced corners are (near-)collinear; the 8x8 system is singular."""


# normalized source corners, order TL, TR, BR, BL
_SRC = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])

_PIVOT_TOL = 1e-10


def patch_corners(patch_w: int, patch_h: int) -> np.ndarray:
    """Pixel coordinates of the patch corners, order TL, TR, BR, BL."""
    w, h = float(patch_w - 1), float(patch_h - 1)
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def _norm_mats(patch_w: int, patch_h: int):
    """S maps pixel coords -> [-1,1]^2 ; Sinv is its inverse."""
    sx, sy = 2.0 / (patch_w - 1), 2.0 / (patch_h - 1)
    s = np.array([[sx, 0.0, -1.0], [0.0, sy, -1.0], [0.0, 0.0, 1.0]])
    sinv = np.array([[1.0 / sx, 0.0, 1.0 / sx], [0.0, 1.0 / sy, 1.0 / sy], [0.0, 0.0, 1.0]])
    return s, sinv


def _gauss_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve one 8x8 system by Gaussian elimination with partial pivoting."""
    a = a.copy()
    b = b.copy()
    n = a.shape[0]
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < _PIVOT_TOL:
            raise DegenerateHomographyError(
                f"pivot {abs(a[piv, col]):.2e} below {_PIVOT_TOL:g}: corner configuration degenerate"
            )
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        factors = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= factors[:, None] * a[col, col:]
        b[col + 1:] -= factors * b[col]
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x


def _build_system(dst: np.ndarray):
    """A h = rhs for the 4 correspondences _SRC[i] -> dst[:, i]."""
    bsz = dst.shape[0]
    a = np.zeros((bsz, 8, 8))
    rhs = np.zeros((bsz, 8))
    for i in range(4):
        x, y = _SRC[i]
        u = dst[:, i, 0]
        v = dst[:, i, 1]
        a[:, 2 * i, 0] = x
        a[:, 2 * i, 1] = y
        a[:, 2 * i, 2] = 1.0
        a[:, 2 * i, 6] = -u * x
        a[:, 2 * i, 7] = -u * y
        a[:, 2 * i + 1, 3] = x
        a[:, 2 * i + 1, 4] = y
        a[:, 2 * i + 1, 5] = 1.0
        a[:, 2 * i + 1, 6] = -v * x
        a[:, 2 * i + 1, 7] = -v * y
        rhs[:, 2 * i] = u
        rhs[:, 2 * i + 1] = v
    return a, rhs


def solve_dlt_np(offsets: np.ndarray, patch_w: int, patch_h: int) -> np.ndarray:
    """Homographies [.., 3, 3] (float64) from corner offsets [.., 8]."""
    offs = np.asarray(offsets, dtype=np.float64)
    squeeze = offs.ndim == 1
    offs = np.atleast_2d(offs)
    s, sinv = _norm_mats(patch_w, patch_h)
    scale = np.array([2.0 / (patch_w - 1), 2.0 / (patch_h - 1)])
    dst = _SRC[None] + offs.reshape(-1, 4, 2) * scale
    a, rhs = _build_system(dst)
    h8 = np.stack([_gauss_solve(a[i], rhs[i]) for i in range(a.shape[0])])
    hn = np.concatenate([h8, np.ones((h8.shape[0], 1))], axis=1).reshape(-1, 3, 3)
    hp = sinv @ hn @ s
    h33 = hp[:, 2, 2]
    if np.any(np.abs(h33) < _PIVOT_TOL):
        raise DegenerateHomographyError("homography scale element vanished")
    h = hp / h33[:, None, None]
    return h[0] if squeeze else h


def solve_dlt(offsets: Tensor, patch_w: int, patch_h: int) -> Tensor:
    """Differentiable corner-offsets -> homography solve (tape op).

    offsets: [B, 8] or [8]; result [B, 3, 3] (or [3, 3]) in the offsets'
    dtype. The forward solve runs in float64 regardless.
    """
    offsets = offsets if isinstance(offsets, Tensor) else Tensor(offsets)
    if offsets.shape[-1] != 8:
        raise ShapeError(f"solve_dlt expects [..,8] offsets, got {offsets.shape}")
    squeeze = offsets.ndim == 1
    offs = np.atleast_2d(offsets.data.astype(np.float64))
    bsz = offs.shape[0]
    s, sinv = _norm_mats(patch_w, patch_h)
    scale = np.array([2.0 / (patch_w - 1), 2.0 / (patch_h - 1)])
    dst = _SRC[None] + offs.reshape(-1, 4, 2) * scale
    a, rhs = _build_system(dst)
    h8 = np.stack([_gauss_solve(a[i], rhs[i]) for i in range(bsz)])
    hn = np.concatenate([h8, np.ones((bsz, 1))], axis=1).reshape(-1, 3, 3)
    hp = sinv @ hn @ s
    h33 = hp[:, 2, 2]
    if np.any(np.abs(h33) < _PIVOT_TOL):
        raise DegenerateHomographyError("homography scale element vanished")
    h = hp / h33[:, None, None]
    out_data = h[0] if squeeze else h
    out = Tensor(out_data, dtype=offsets.dtype)

    def vjp(g):
        gh = np.asarray(g, dtype=np.float64).reshape(-1, 3, 3)
        # H = Hp / h33
        dhp = gh / h33[:, None, None]
        dhp[:, 2, 2] -= (gh * hp).sum(axis=(1, 2)) / (h33 * h33)
        # Hp = Sinv Hn S
        dhn = sinv.T @ dhp @ s.T
        dh8 = dhn.reshape(-1, 9)[:, :8]
        d_off = np.zeros_like(offs)
        for i in range(bsz):
            z = _gauss_solve(a[i].T, dh8[i])
            # rhs grad is z; A grad is  -z h8^T, and A depends on dst only
            # in columns 6,7 of each row: A[2i,6] = -u x, A[2i,7] = -u y
            da = -np.outer(z, h8[i])
            for j in range(4):
                x, y = _SRC[j]
                du = z[2 * j] + da[2 * j, 6] * (-x) + da[2 * j, 7] * (-y)
                dv = z[2 * j + 1] + da[2 * j + 1, 6] * (-x) + da[2 * j + 1, 7] * (-y)
                d_off[i, 2 * j] = du * scale[0]
                d_off[i, 2 * j + 1] = dv * scale[1]
        if squeeze:
            d_off = d_off.reshape(8)
        return (d_off.astype(offsets.dtype),)

    return record_op(out, [offsets], vjp)


def measure_offsets_np(h: np.ndarray, patch_w: int, patch_h: int) -> np.ndarray:
    """Corner offsets realized by homography ``h`` (inverse of solve_dlt)."""
    corners = patch_corners(patch_w, patch_h)
    pts = np.concatenate([corners, np.ones((4, 1))], axis=1)
    mapped = pts @ np.asarray(h, dtype=np.float64).T
    mapped = mapped[:, :2] / mapped[:, 2:3]
    return (mapped - corners).reshape(8)


def inverse3x3(h: Tensor) -> Tensor:
    """Batched 3x3 inverse (tape op)."""
    h = h if isinstance(h, Tensor) else Tensor(h)
    inv = np.linalg.inv(h.data.astype(np.float64)).astype(h.dtype)
    out = Tensor(inv, dtype=h.dtype)

    def vjp(g):
        it = np.swapaxes(inv, -1, -2)
        return (-it @ g @ it,)

    return record_op(out, [h], vjp)


def _base_grid(out_h: int, out_w: int) -> np.ndarray:
    """Homogeneous pixel coordinates [3, N], N = out_h*out_w row-major."""
    ys, xs = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1), np.ones(out_h * out_w)]).astype(np.float64)


def homography_grid(h: Tensor, out_h: int, out_w: int) -> Tensor:
    """Sampling grid [B,out_h,out_w,2]: source coords H^-1 p per output pixel."""
    h = h if isinstance(h, Tensor) else Tensor(h)
    single = h.ndim == 2
    hb = ops.reshape(h, (1, 3, 3)) if single else h
    bsz = hb.shape[0]
    hinv = inverse3x3(hb)
    base = Tensor(_base_grid(out_h, out_w), dtype=h.dtype)
    q = ops.matmul(hinv, base)  # [B, 3, N]
    e0 = Tensor(np.array([[1.0, 0.0, 0.0]]), dtype=h.dtype)
    e1 = Tensor(np.array([[0.0, 1.0, 0.0]]), dtype=h.dtype)
    e2 = Tensor(np.array([[0.0, 0.0, 1.0]]), dtype=h.dtype)
    gx = ops.div(ops.matmul(e0, q), ops.matmul(e2, q))  # [B, 1, N]
    gy = ops.div(ops.matmul(e1, q), ops.matmul(e2, q))
    grid = ops.concat([gx, gy], axis=1)  # [B, 2, N]
    grid = ops.transpose(grid, (0, 2, 1))
    return ops.reshape(grid, (bsz, out_h, out_w, 2))


def warp(img: Tensor, h: Tensor) -> Tensor:
    """Inverse-warp [B,H,W,C] by homography h ([3,3] or [B,3,3])."""
    img = img if isinstance(img, Tensor) else Tensor(img)
    _, hh, ww, _ = img.shape
    grid = homography_grid(h, hh, ww)
    if grid.shape[0] != img.shape[0]:
        if grid.shape[0] != 1:
            raise ShapeError(f"warp batch mismatch: img {img.shape[0]}, H {grid.shape[0]}")
        grid = ops.concat([grid] * img.shape[0], axis=0)
    return ops.bilinear_sample(img, grid)


def warp_mask(e: Tensor, h: Tensor) -> Tensor:
    """Warp an all-one mask; values in [0,1], ~1 on overlap, ~0 outside."""
    return warp(e, h)


def ones_mask(batch: int, height: int, width: int, dtype=None) -> Tensor:
    from .tensor import get_default_dtype

    dt = dtype or get_default_dtype()
    return Tensor(np.ones((batch, height, width, 1), dtype=dt), dtype=dt)


def scale_homography(h: Tensor, sx: float, sy: float) -> Tensor:
    """Conjugate h by the coordinate scaling (x,y) -> (sx*x, sy*y).

    Produces the same transform expressed at a resized resolution (e.g.
    a feature map at 1/8 scale uses sx = sy = 1/8).
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    d = np.diag([sx, sy, 1.0])
    dinv = np.diag([1.0 / sx, 1.0 / sy, 1.0])
    dd = Tensor(d, dtype=h.dtype)
    dinv_t = Tensor(dinv, dtype=h.dtype)
    return ops.matmul(ops.matmul(dd, h), dinv_t)


def cascade_totals(stage_offsets: list) -> list:
    """Running offset totals for stages ordered deepest-first."""
    totals = []
    run = None
    for off in stage_offsets:
        run = off if run is None else ops.add(run, off)
        totals.append(run)
    return totals


def cascade_compose(stage_offsets: list, patch_w: int, patch_h: int) -> Tensor:
    """Final homography from per-stage residual offsets (deepest first)."""
    return solve_dlt(cascade_totals(stage_offsets)[-1], patch_w, patch_h)
