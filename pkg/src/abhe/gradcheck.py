"""Finite-difference verification of every differentiable operation.

The oracle is a float64 central difference of the op's forward pass; the
analytic gradient under test can run at float32 (tolerance 1e-3) or
float64 (tolerance 1e-6). Errors are reported as
max|analytic - numeric| / (max|numeric| + tiny), a global relative error
that is robust to individual near-zero gradient entries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import geometry, ops
from .tensor import Tape, Tensor, default_dtype


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def format(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name:<34s} {self.max_rel_err:11.3e}  < {self.tolerance:g} {status}"


def numeric_grads(fn, arrays, eps: float = 1e-4):
    """Central-difference grads of scalar fn(*float64 arrays) w.r.t. each array."""
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]

    def value(args):
        with default_dtype(np.float64):
            out = fn(*[Tensor(a, dtype=np.float64) for a in args])
        return float(out.data.reshape(()))

    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = value(arrays)
            flat[j] = orig - eps
            down = value(arrays)
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grads(fn, arrays, dtype):
    """Tape gradients of scalar fn(*arrays) at the given compute dtype."""
    tensors = [Tensor(np.asarray(a, dtype=dtype), requires_grad=True, dtype=dtype) for a in arrays]
    with default_dtype(dtype):
        with Tape() as tape:
            out = fn(*tensors)
            tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def compare(fn, arrays, dtype=np.float32, eps: float = 1e-4) -> float:
    """Global relative error between analytic and numeric gradients."""
    num = numeric_grads(fn, arrays, eps=eps)
    ana = analytic_grads(fn, arrays, dtype)
    worst = 0.0
    for a, n in zip(ana, num):
        denom = np.abs(n).max() + 1e-12
        err = np.abs(a.astype(np.float64) - n).max() / denom
        worst = max(worst, err)
    return worst


def suite(dtype=np.float32, rng=None):
    """All per-op checks plus the end-to-end offsets->DLT->warp->L1 path.

    Returns a list of :class:`CheckRow`. Per-op tolerance is 1e-3 at
    float32 and 1e-6 at float64; the end-to-end row uses 1e-2 (double
    interpolation).
    """
    rng = rng or np.random.default_rng(20240501)
    tol = 1e-3 if dtype == np.float32 else 1e-6
    rows = []

    def check(name, fn, arrays, tolerance=None, eps=1e-4):
        err = compare(fn, arrays, dtype=dtype, eps=eps)
        rows.append(CheckRow(name, err, tolerance or tol))

    def proj(fn, seed=0):
        def scalar_fn(*tensors):
            out = fn(*tensors)
            w = np.random.default_rng(seed).standard_normal(out.shape)
            return ops.sum_(ops.mul(out, Tensor(w, dtype=out.dtype)))

        return scalar_fn

    r = rng.standard_normal

    check("add", proj(ops.add), [r((3, 4)), r((3, 4))])
    check("add (broadcast)", proj(ops.add), [r((3, 4)), r((1, 4))])
    check("sub", proj(ops.sub), [r((2, 5)), r((2, 5))])
    check("mul", proj(ops.mul), [r((3, 4)), r((3, 4))])
    check("div", proj(ops.div), [r((3, 4)), r((3, 4)) + 3.0])
    check("relu", proj(ops.relu), [r((4, 4)) + 0.2 * np.sign(r((4, 4)))])
    check("sigmoid", proj(ops.sigmoid), [r((3, 5))])
    check("sqrt", proj(ops.sqrt), [np.abs(r((3, 4))) + 0.5])
    check("abs", proj(ops.absolute), [r((3, 4)) + 0.2 * np.sign(r((3, 4)))])
    check("sum", proj(lambda x: ops.sum_(x, axis=1)), [r((3, 4))])
    check("mean", proj(lambda x: ops.mean(x, axis=0)), [r((3, 4))])
    check("max", proj(lambda x: ops.amax(x, axis=1)), [r((4, 5))])
    check("matmul", proj(ops.matmul), [r((3, 4)), r((4, 2))])
    check("matmul (batched)", proj(ops.matmul), [r((2, 3, 4)), r((2, 4, 2))])
    check("softmax_scaled", proj(lambda x: ops.softmax_scaled(x, 3.0)), [r((3, 5))])
    check(
        "layer_norm",
        proj(ops.layer_norm),
        [r((3, 6)), r(6) * 0.3 + 1.0, r(6) * 0.3],
    )
    check(
        "conv2d same",
        proj(lambda x, k: ops.conv2d(x, k, stride=1, padding="same")),
        [r((1, 5, 5, 2)), r((3, 3, 2, 3)) * 0.5],
    )
    check(
        "conv2d stride-2 valid",
        proj(lambda x, k: ops.conv2d(x, k, stride=2, padding="valid")),
        [r((2, 6, 6, 2)), r((3, 3, 2, 2)) * 0.5],
    )
    check(
        "box_filter3",
        proj(ops.box_filter3),
        [r((1, 5, 5, 2))],
    )
    check("avg_pool2d", proj(lambda x: ops.avg_pool2d(x, 2)), [r((1, 4, 6, 2))])
    check(
        "bilinear_sample",
        proj(ops.bilinear_sample),
        [
            r((1, 6, 6, 2)),
            rng.uniform(0.1, 4.6, (1, 3, 4, 2)) + 0.13,  # keep clear of integer kinks
        ],
    )
    check("roll2d", proj(lambda x: ops.roll2d(x, 1, 2)), [r((1, 4, 4, 2))])
    check("transpose+reshape", proj(lambda x: ops.reshape(ops.transpose(x, (0, 2, 1)), (6, 2))), [r((2, 2, 3))])
    check("concat", proj(lambda a, b: ops.concat([a, b], axis=1)), [r((2, 3)), r((2, 2))])
    check(
        "gather_rows",
        proj(lambda t: ops.gather_rows(t, np.array([0, 2, 1, 2]))),
        [r((4, 3))],
    )
    check("inverse3x3", proj(geometry.inverse3x3), [np.eye(3) + 0.1 * r((3, 3))])
    check(
        "solve_dlt",
        proj(lambda o: geometry.solve_dlt(o, 64, 64)),
        [rng.uniform(-8, 8, (2, 8))],
    )
    check(
        "composite conv->softmax->matmul",
        lambda x, k, w: ops.sum_(
            ops.mul(
                ops.matmul(
                    ops.softmax_scaled(
                        ops.reshape(ops.conv2d(x, k, padding="same"), (4, 8)), 2.0
                    ),
                    w,
                ),
                Tensor(np.random.default_rng(7).standard_normal((4, 3)), dtype=x.dtype),
            )
        ),
        [r((1, 2, 2, 2)), r((3, 3, 2, 8)) * 0.3, r((8, 3))],
    )

    # end-to-end: offsets -> DLT -> warp -> masked L1 (the training path)
    img_a = np.clip(0.5 + 0.35 * _smooth_image(rng, 16), 0, 1)
    img_b = np.clip(0.5 + 0.35 * _smooth_image(rng, 16), 0, 1)

    def end_to_end(offsets):
        h = geometry.solve_dlt(offsets, 16, 16)
        ia = Tensor(img_a[None, :, :, None], dtype=offsets.dtype)
        ib = Tensor(img_b[None, :, :, None], dtype=offsets.dtype)
        mask = geometry.warp_mask(geometry.ones_mask(1, 16, 16, dtype=offsets.dtype.type), h)
        return ops.mean(ops.absolute(ops.sub(ops.mul(mask, ia), geometry.warp(ib, h))))

    err = compare(end_to_end, [rng.uniform(-1.5, 1.5, (8,)) + 0.23], dtype=dtype, eps=1e-3)
    rows.append(CheckRow("end-to-end offsets->DLT->warp->L1", err, 1e-2))
    return rows


def _smooth_image(rng, size):
    """Coarse noise upsampled then box-blurred: smooth but textured."""
    img = np.kron(rng.standard_normal((size // 4, size // 4)), np.ones((4, 4)))
    for _ in range(3):
        pad = np.pad(img, 1, mode="edge")
        img = sum(
            pad[di:di + size, dj:dj + size] for di in range(3) for dj in range(3)
        ) / 9.0
    return img


def run_suite(dtype=np.float32, seed: int = 20240501):
    """Execute the suite; returns (rows, elapsed_seconds)."""
    start = time.perf_counter()
    rows = suite(dtype=dtype, rng=np.random.default_rng(seed))
    return rows, time.perf_counter() - start


def format_report(rows, elapsed: float) -> str:
    lines = [r.format() for r in rows]
    n_fail = sum(not r.passed for r in rows)
    lines.append(f"{len(rows)} checks, {n_fail} failures, {elapsed:.1f}s")
    return "\n".join(lines)
