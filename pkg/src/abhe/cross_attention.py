"""Mutual non-local attention between the two deepest feature maps.

Both streams share the query/key/value projectors (1x1 convs into a
half-width embedding) and the output projector. Each stream's queries
attend over the other stream's keys with a temperature-scaled softmax;
the attended values are projected back to full width and blended with
the original map: ``Z = lam * F + (1 - lam) * w_y``. Swapping the input
streams swaps the outputs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


@dataclass
class CrossNonLocalParams:
    conv_q: Tensor
    conv_k: Tensor
    conv_v: Tensor
    conv_out: Tensor
    temperature: float = 10.0
    blend: float = 0.9

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.blend <= 1.0:
            raise ValueError(f"blend must lie in [0,1], got {self.blend}")

    def named(self, prefix: str = "nonlocal.") -> dict:
        return {
            f"{prefix}q.w": self.conv_q,
            f"{prefix}k.w": self.conv_k,
            f"{prefix}v.w": self.conv_v,
            f"{prefix}out.w": self.conv_out,
        }


def init_cross_nonlocal(channels: int, rng: np.random.Generator,
                        temperature: float = 10.0, blend: float = 0.9,
                        embed: int | None = None) -> CrossNonLocalParams:
    """Projectors into a half-width embedding, restored by the output conv."""
    embed = embed or max(1, channels // 2)
    std = np.sqrt(2.0 / channels)

    def conv(cin, cout):
        return Tensor(rng.normal(0.0, std, (1, 1, cin, cout)).astype(np.float32),
                      requires_grad=True)

    return CrossNonLocalParams(
        conv_q=conv(channels, embed),
        conv_k=conv(channels, embed),
        conv_v=conv(channels, embed),
        conv_out=conv(embed, channels),
        temperature=temperature,
        blend=blend,
    )


def _flat(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    return ops.reshape(x, (b, h * w, c))


def similarity_matrix(fi: Tensor, fj: Tensor, params: CrossNonLocalParams) -> Tensor:
    """[B,HW,HW] of query(fi) . key(fj) dot products per position pair."""
    if fi.shape != fj.shape:
        raise ShapeError(f"feature maps must match, got {fi.shape} vs {fj.shape}")
    q = _flat(ops.conv2d(fi, params.conv_q, padding="same"))
    k = _flat(ops.conv2d(fj, params.conv_k, padding="same"))
    return ops.matmul(q, ops.transpose(k, (0, 2, 1)))


def cross_nonlocal(fa: Tensor, fb: Tensor, params: CrossNonLocalParams):
    """Pre-aligned maps (Za, Zb) for same-shape [B,H,W,C] inputs."""
    if fa.shape != fb.shape:
        raise ShapeError(f"feature maps must match, got {fa.shape} vs {fb.shape}")
    b, h, w, c = fa.shape
    ga = _flat(ops.conv2d(fa, params.conv_v, padding="same"))
    gb = _flat(ops.conv2d(fb, params.conv_v, padding="same"))
    sa = ops.softmax_scaled(similarity_matrix(fa, fb, params), params.temperature)
    sb = ops.softmax_scaled(similarity_matrix(fb, fa, params), params.temperature)
    embed = ga.shape[-1]
    ya = ops.reshape(ops.matmul(sa, gb), (b, h, w, embed))
    yb = ops.reshape(ops.matmul(sb, ga), (b, h, w, embed))
    wya = ops.conv2d(ya, params.conv_out, padding="same")
    wyb = ops.conv2d(yb, params.conv_out, padding="same")
    lam = params.blend
    za = ops.add(ops.scale(fa, lam), ops.scale(wya, 1.0 - lam))
    zb = ops.add(ops.scale(fb, lam), ops.scale(wyb, 1.0 - lam))
    return za, zb
