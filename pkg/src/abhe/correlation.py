"""Correlation volume, channel attention gate, and the offset regressor.

The volume for same-size maps Fa, Fb is [B,H,W,H*W]: channel m (source
position m, row-major) holds the H x W map of cosine similarities of
Fa's position m against every position of a 3x3-smoothed Fb. Channel
attention squeezes each channel to its spatial max, runs a bottleneck
MLP with a sigmoid gate, and rescales channels; positive scaling never
moves a channel's argmax. The regression head is three stride-2 convs
followed by four fully-connected layers ending in 8 corner offsets, the
last layer zero-initialized so training starts from the identity
homography.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

EPS_NORM = 1e-8
# tiny floor inside the sqrt keeps its gradient finite at all-zero positions
EPS_SQRT = 1e-12


class MemoryGuardError(ValueError):
    """Correlation volume would exceed the configured H*W cap."""


def _cosine_normalize(x: Tensor) -> Tensor:
    sq = ops.add(ops.sum_(ops.mul(x, x), axis=-1, keepdims=True),
                 Tensor(np.asarray(EPS_SQRT), dtype=x.dtype))
    norm = ops.sqrt(sq)
    return ops.div(x, ops.add(norm, Tensor(np.asarray(EPS_NORM), dtype=x.dtype)))


def correlation_volume(fa: Tensor, fb: Tensor, max_hw: int = 4096) -> Tensor:
    """Cosine-similarity volume [B,H,W,H*W] of fa against smoothed fb."""
    if fa.shape != fb.shape:
        raise ShapeError(f"correlation needs same-shape maps, got {fa.shape} vs {fb.shape}")
    b, h, w, c = fa.shape
    if h * w > max_hw:
        raise MemoryGuardError(
            f"correlation volume {h}x{w} exceeds the configured cap of {max_hw} positions"
        )
    fbs = ops.box_filter3(fb)
    na = _cosine_normalize(fa)
    nb = _cosine_normalize(fbs)
    a = ops.reshape(na, (b, h * w, c))
    t = ops.reshape(nb, (b, h * w, c))
    sim = ops.matmul(a, ops.transpose(t, (0, 2, 1)))  # [B, src, tgt]
    return ops.reshape(ops.transpose(sim, (0, 2, 1)), (b, h, w, h * w))


def init_channel_attention(channels: int, rng: np.random.Generator,
                           bottleneck: int = 4) -> dict:
    """Three-FC bottleneck MLP: HW -> HW/r -> HW/r -> HW."""
    hidden = max(1, channels // bottleneck)

    def fc(cin, cout):
        std = np.sqrt(2.0 / cin)
        return Tensor(rng.normal(0.0, std, (cin, cout)).astype(np.float32), requires_grad=True)

    return {
        "fc1.w": fc(channels, hidden),
        "fc1.b": Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True),
        "fc2.w": fc(hidden, hidden),
        "fc2.b": Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True),
        "fc3.w": fc(hidden, channels),
        "fc3.b": Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True),
    }


def channel_attention(vol: Tensor, params: dict, return_weights: bool = False):
    """Rescale each channel by a (0,1) gate driven by its global spatial max."""
    b, h, w, ch = vol.shape
    peak = ops.amax(ops.reshape(vol, (b, h * w, ch)), axis=1)  # [B, ch]
    hid = ops.relu(ops.linear(peak, params["fc1.w"], params["fc1.b"]))
    hid = ops.relu(ops.linear(hid, params["fc2.w"], params["fc2.b"]))
    gate = ops.sigmoid(ops.linear(hid, params["fc3.w"], params["fc3.b"]))
    out = ops.mul(vol, ops.reshape(gate, (b, 1, 1, ch)))
    if return_weights:
        return out, gate
    return out


def init_regression_head(in_channels: int, spatial: int, rng: np.random.Generator,
                         conv_widths=(16, 32, 64), fc_widths=(128, 64, 32)) -> dict:
    """Head parameters; the final FC is zero-initialized (identity start)."""
    params = {}
    cin = in_channels
    side = spatial
    for i, cout in enumerate(conv_widths, start=1):
        std = np.sqrt(2.0 / (9 * cin))
        params[f"conv{i}.w"] = Tensor(
            rng.normal(0.0, std, (3, 3, cin, cout)).astype(np.float32), requires_grad=True
        )
        params[f"conv{i}.b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
        cin = cout
        side = -(-side // 2)
    flat = side * side * cin
    widths = [flat, *fc_widths, 8]
    for i in range(4):
        cin, cout = widths[i], widths[i + 1]
        if i == 3:
            w = np.zeros((cin, cout), dtype=np.float32)
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / cin), (cin, cout)).astype(np.float32)
        params[f"fc{i + 1}.w"] = Tensor(w, requires_grad=True)
        params[f"fc{i + 1}.b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
    return params


def regress_offsets(vol: Tensor, params: dict) -> Tensor:
    """Corner offsets [B,8] (full-resolution pixel units) from a volume."""
    x = vol
    for i in (1, 2, 3):
        x = ops.relu(ops.add(
            ops.conv2d(x, params[f"conv{i}.w"], stride=2, padding="same"),
            params[f"conv{i}.b"],
        ))
    b = x.shape[0]
    x = ops.reshape(x, (b, int(np.prod(x.shape[1:]))))
    for i in (1, 2, 3):
        x = ops.relu(ops.linear(x, params[f"fc{i}.w"], params[f"fc{i}.b"]))
    return ops.linear(x, params["fc4.w"], params["fc4.b"])
