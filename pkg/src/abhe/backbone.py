"""Siamese feature extractor: conv stem + three windowed-attention stages.

The stem (two 3x3 convs, first with stride 2) produces the shallow
feature at half resolution. Each stage runs two attention blocks (plain
then shifted); stages 2 and 3 start with patch merging, halving extents
and doubling channels. A per-stage 3x3 conv turns the stage output into
the deep feature, and the shallow feature is average-pooled to size and
concatenated onto it; the un-concatenated stage output feeds the next
stage. Both input streams use the same parameter set, so identical
inputs give identical pyramids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops, swin
from .tensor import ShapeError, Tensor


@dataclass
class FeaturePyramid:
    """F1, F2, F3 at 1/2, 1/4, 1/8 input resolution (shallow ++ deep)."""

    levels: list  # [F1, F2, F3]

    @property
    def f1(self):
        return self.levels[0]

    @property
    def f2(self):
        return self.levels[1]

    @property
    def f3(self):
        return self.levels[2]


def _conv_init(rng, kh, kw, cin, cout):
    std = np.sqrt(2.0 / (kh * kw * cin))
    return Tensor(rng.normal(0.0, std, (kh, kw, cin, cout)).astype(np.float32), requires_grad=True)


def init_backbone_params(stem_ch: int, in_ch: int, window: int, num_heads: int,
                         mlp_ratio: int, rng: np.random.Generator):
    """Parameter dict + per-stage configs; stage dims are C, 2C, 4C."""
    params = {}
    params["stem.conv1.w"] = _conv_init(rng, 3, 3, in_ch, stem_ch)
    params["stem.conv1.b"] = Tensor(np.zeros(stem_ch, dtype=np.float32), requires_grad=True)
    params["stem.conv2.w"] = _conv_init(rng, 3, 3, stem_ch, stem_ch)
    params["stem.conv2.b"] = Tensor(np.zeros(stem_ch, dtype=np.float32), requires_grad=True)
    configs = []
    dim = stem_ch
    for stage in (1, 2, 3):
        cfg = swin.SwinConfig(dim=dim, num_heads=num_heads, window=window, mlp_ratio=mlp_ratio)
        configs.append(cfg)
        if stage > 1:
            merge = swin.init_merge_params(dim // 2, rng)
            for k, v in merge.items():
                params[f"stage{stage}.merge.{k}"] = v
        for block in (1, 2):
            for k, v in swin.init_block_params(cfg, rng).items():
                params[f"stage{stage}.block{block}.{k}"] = v
        params[f"stage{stage}.deep.w"] = _conv_init(rng, 3, 3, dim, dim)
        params[f"stage{stage}.deep.b"] = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        dim *= 2
    return params, configs


def _sub(params: dict, prefix: str) -> dict:
    plen = len(prefix)
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix)}


def extract_pyramid(img: Tensor, params: dict, configs: list) -> FeaturePyramid:
    """Feature pyramid of a [B,H,W,Cin] image; H,W divisible by 8*window."""
    b, h, w, _ = img.shape
    window = configs[0].window
    need = 8 * window
    if h % need or w % need:
        raise ShapeError(f"input extents {(h, w)} must be divisible by {need}")
    x = ops.relu(ops.add(
        ops.conv2d(img, params["stem.conv1.w"], stride=2, padding="same"),
        params["stem.conv1.b"],
    ))
    x = ops.relu(ops.add(ops.conv2d(x, params["stem.conv2.w"], padding="same"), params["stem.conv2.b"]))
    shallow = x
    levels = []
    for stage, cfg in enumerate(configs, start=1):
        if stage > 1:
            x = swin.patch_merging(x, _sub(params, f"stage{stage}.merge."))
        x = swin.swin_block(x, _sub(params, f"stage{stage}.block1."), cfg, shift=0)
        x = swin.swin_block(x, _sub(params, f"stage{stage}.block2."), cfg, shift=cfg.window // 2)
        deep = ops.relu(ops.add(
            ops.conv2d(x, params[f"stage{stage}.deep.w"], padding="same"),
            params[f"stage{stage}.deep.b"],
        ))
        pool = 2 ** (stage - 1)
        sf = shallow if pool == 1 else ops.avg_pool2d(shallow, pool)
        levels.append(ops.concat([sf, deep], axis=-1))
    return FeaturePyramid(levels)
