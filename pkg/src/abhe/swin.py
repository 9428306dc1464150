"""Windowed multi-head self-attention blocks with shifted windows.

Feature maps are [B,H,W,C]; a window is an M x M tile flattened to M^2
tokens in row-major order. Each block is
``x + WMSA(LN(x))`` followed by ``t + MLP(LN(t))`` with the MLP being
FC -> ReLU -> FC at hidden width ``mlp_ratio * C``. Shifted blocks roll
the map by -M/2 and mask attention across pre-shift region boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

MASK_PENALTY = -1e9


@dataclass
class SwinConfig:
    dim: int
    num_heads: int = 2
    window: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.dim % self.num_heads:
            raise ShapeError(f"dim {self.dim} not divisible by num_heads {self.num_heads}")


def window_partition(x: Tensor, window: int) -> Tensor:
    """[B,H,W,C] -> [B*H*W/window^2, window^2, C], row-major inside tiles."""
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"extents {(h, w)} not divisible by window {window}")
    nh, nw = h // window, w // window
    t = ops.reshape(x, (b, nh, window, nw, window, c))
    t = ops.transpose(t, (0, 1, 3, 2, 4, 5))
    return ops.reshape(t, (b * nh * nw, window * window, c))


def window_reverse(tokens: Tensor, window: int, b: int, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    nh, nw = h // window, w // window
    t = ops.reshape(tokens, (b, nh, nw, window, window, tokens.shape[-1]))
    t = ops.transpose(t, (0, 1, 3, 2, 4, 5))
    return ops.reshape(t, (b, h, w, tokens.shape[-1]))


def relative_index(window: int) -> np.ndarray:
    """Token-pair -> bias-table row for an M x M window ((2M-1)^2 rows).

    Row (i, j) encodes the displacement pos_i - pos_j; negating the
    displacement maps to the mirrored table row, which makes a
    symmetric use of the table possible.
    """
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"))
    coords = coords.reshape(2, -1)  # (dy,dx) per token
    rel = coords[:, :, None] - coords[:, None, :]  # [2, M^2, M^2]
    rel = rel + (window - 1)
    return (rel[0] * (2 * window - 1) + rel[1]).astype(np.int64)


def attention_mask(h: int, w: int, window: int, shift: int, dtype=np.float32) -> np.ndarray | None:
    """Additive mask [num_windows, M^2, M^2] forbidding cross-region pairs.

    Regions are the pre-shift areas that a cyclic roll by (-shift,
    -shift) stitches together; ``None`` when shift == 0.
    """
    if shift == 0:
        return None
    labels = np.zeros((h, w), dtype=np.int64)
    region = 0
    for ys in (slice(0, h - window), slice(h - window, h - shift), slice(h - shift, h)):
        for xs in (slice(0, w - window), slice(w - window, w - shift), slice(w - shift, w)):
            labels[ys, xs] = region
            region += 1
    nh, nw = h // window, w // window
    tiles = labels.reshape(nh, window, nw, window).transpose(0, 2, 1, 3).reshape(-1, window * window)
    diff = tiles[:, :, None] != tiles[:, None, :]
    return np.where(diff, dtype(MASK_PENALTY), dtype(0.0))


def wmsa(tokens: Tensor, p_q: Tensor, p_k: Tensor, p_v: Tensor, p_out: Tensor,
         bias_table: Tensor, bias_index: np.ndarray, num_heads: int,
         attn_mask: np.ndarray | None = None, return_weights: bool = False):
    """Window multi-head self-attention over [NW, T, C] token stacks.

    Per head: softmax(q k^T / sqrt(d) + b (+ mask)) v with d = C /
    num_heads, heads concatenated and projected by ``p_out``. The mask,
    when given, is [windows_per_image, T, T] and is tiled over the
    batch.
    """
    nw, t, c = tokens.shape
    d = c // num_heads

    def split_heads(x):
        x = ops.reshape(x, (nw, t, num_heads, d))
        return ops.transpose(x, (0, 2, 1, 3))  # [NW, heads, T, d]

    q = split_heads(ops.matmul(tokens, p_q))
    k = split_heads(ops.matmul(tokens, p_k))
    v = split_heads(ops.matmul(tokens, p_v))
    attn = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    bias = ops.gather_rows(bias_table, bias_index.reshape(-1))  # [T*T, heads]
    bias = ops.transpose(ops.reshape(bias, (t, t, num_heads)), (2, 0, 1))
    attn = ops.add(attn, ops.reshape(bias, (1, num_heads, t, t)))
    if attn_mask is not None:
        wpi = attn_mask.shape[0]
        attn = ops.reshape(attn, (nw // wpi, wpi, num_heads, t, t))
        attn = ops.add(attn, Tensor(attn_mask[None, :, None], dtype=tokens.dtype))
        attn = ops.reshape(attn, (nw, num_heads, t, t))
    weights = ops.softmax_scaled(attn, 1.0)
    out = ops.matmul(weights, v)  # [NW, heads, T, d]
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (nw, t, c))
    out = ops.matmul(out, p_out)
    if return_weights:
        return out, weights
    return out


def init_block_params(cfg: SwinConfig, rng: np.random.Generator) -> dict:
    """Fresh parameter tensors for one block (LN + attention + MLP)."""
    c = cfg.dim
    hidden = cfg.mlp_ratio * c
    std = 0.02

    def w(shape):
        return Tensor(rng.normal(0.0, std, shape).astype(np.float32), requires_grad=True)

    return {
        "ln1.gamma": Tensor(np.ones(c, dtype=np.float32), requires_grad=True),
        "ln1.beta": Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
        "attn.wq": w((c, c)),
        "attn.wk": w((c, c)),
        "attn.wv": w((c, c)),
        "attn.wo": w((c, c)),
        "attn.bias_table": Tensor(
            np.zeros(((2 * cfg.window - 1) ** 2, cfg.num_heads), dtype=np.float32),
            requires_grad=True,
        ),
        "ln2.gamma": Tensor(np.ones(c, dtype=np.float32), requires_grad=True),
        "ln2.beta": Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
        "mlp.w1": w((c, hidden)),
        "mlp.b1": Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True),
        "mlp.w2": w((hidden, c)),
        "mlp.b2": Tensor(np.zeros(c, dtype=np.float32), requires_grad=True),
    }


def swin_block(x: Tensor, params: dict, cfg: SwinConfig, shift: int = 0) -> Tensor:
    """One (optionally shifted) transformer block on a [B,H,W,C] map."""
    b, h, w, c = x.shape
    m = cfg.window
    normed = ops.layer_norm(x, params["ln1.gamma"], params["ln1.beta"])
    if shift:
        normed = ops.roll2d(normed, -shift, -shift)
    tokens = window_partition(normed, m)
    mask = attention_mask(h, w, m, shift, dtype=x.dtype.type) if shift else None
    attn_tokens = wmsa(
        tokens, params["attn.wq"], params["attn.wk"], params["attn.wv"],
        params["attn.wo"], params["attn.bias_table"], relative_index(m),
        cfg.num_heads, attn_mask=mask,
    )
    attn_map = window_reverse(attn_tokens, m, b, h, w)
    if shift:
        attn_map = ops.roll2d(attn_map, shift, shift)
    t = ops.add(x, attn_map)
    normed2 = ops.layer_norm(t, params["ln2.gamma"], params["ln2.beta"])
    hidden = ops.relu(ops.linear(normed2, params["mlp.w1"], params["mlp.b1"]))
    return ops.add(t, ops.linear(hidden, params["mlp.w2"], params["mlp.b2"]))


def init_merge_params(c_in: int, rng: np.random.Generator) -> dict:
    return {
        "norm.gamma": Tensor(np.ones(4 * c_in, dtype=np.float32), requires_grad=True),
        "norm.beta": Tensor(np.zeros(4 * c_in, dtype=np.float32), requires_grad=True),
        "proj": Tensor(
            rng.normal(0.0, 0.02, (4 * c_in, 2 * c_in)).astype(np.float32),
            requires_grad=True,
        ),
    }


def patch_merging(x: Tensor, params: dict) -> Tensor:
    """[B,H,W,C] -> [B,H/2,W/2,2C]: concat 2x2 cells, LN, linear."""
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"patch_merging needs even extents, got {(h, w)}")
    t = ops.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    t = ops.transpose(t, (0, 1, 3, 2, 4, 5))
    t = ops.reshape(t, (b, h // 2, w // 2, 4 * c))
    t = ops.layer_norm(t, params["norm.gamma"], params["norm.beta"])
    return ops.matmul(t, params["proj"])
