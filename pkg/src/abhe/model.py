"""Full estimation network: shared backbone, pre-alignment, 3-stage cascade.

Forward pass over a patch pair (both streams share every backbone
weight):

  1. feature pyramids for both patches;
  2. mutual non-local attention on the deepest maps -> Za, Zb;
  3. deepest stage: correlation volume of (Za, Zb) -> channel attention
     -> regression head -> offsets d3;
  4. each finer stage warps the source feature map toward the target by
     the running-total homography (rescaled to that stage's resolution),
     correlates against the target map, and regresses a residual;
  5. the homography of stage k comes from the running offset total, so
     the last stage's homography is the final estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone, correlation, cross_attention, geometry, ops
from .tensor import Tensor


@dataclass
class ModelConfig:
    patch: int = 64
    in_channels: int = 1
    stem_channels: int = 8
    window: int = 4
    num_heads: int = 2
    mlp_ratio: int = 4
    temperature: float = 10.0
    blend: float = 0.9
    head_conv: tuple = (16, 32, 64)
    head_fc: tuple = (128, 64, 32)
    attn_bottleneck: int = 4
    corr_max_hw: int = 4096

    def level_sizes(self):
        """Spatial extent of F1..F3 (halved per level, stem is stride 2)."""
        return [self.patch // 2, self.patch // 4, self.patch // 8]

    def level_channels(self):
        """Channels of F1..F3: shallow C concatenated with deep C*2^i."""
        c = self.stem_channels
        return [c + c, c + 2 * c, c + 4 * c]


@dataclass
class ForwardResult:
    stage_offsets: list  # [d3, d2, d1], each [B, 8]
    totals: list  # running sums, same order
    homographies: list  # [H3, H2, H1] at image resolution
    za: Tensor
    zb: Tensor
    h3_feature: Tensor  # deepest-stage homography at F3 resolution

    @property
    def final_homography(self):
        return self.homographies[-1]

    @property
    def final_offsets(self):
        return self.totals[-1]


class Model:
    """Parameter container + forward pass. ``params`` maps name -> Tensor."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        self.params: dict = {}
        bb_params, self.stage_configs = backbone.init_backbone_params(
            config.stem_channels, config.in_channels, config.window,
            config.num_heads, config.mlp_ratio, rng,
        )
        self.params.update(bb_params)
        c3 = config.level_channels()[2]
        self.nonlocal_params = cross_attention.init_cross_nonlocal(
            c3, rng, temperature=config.temperature, blend=config.blend,
        )
        self.params.update(self.nonlocal_params.named())
        sizes = config.level_sizes()
        # cascade order: level 3 first (deepest), then 2, then 1
        for level in (3, 2, 1):
            size = sizes[level - 1]
            hw = size * size
            ca = correlation.init_channel_attention(hw, rng, config.attn_bottleneck)
            for k, v in ca.items():
                self.params[f"level{level}.chattn.{k}"] = v
            head = correlation.init_regression_head(
                hw, size, rng, conv_widths=config.head_conv, fc_widths=config.head_fc,
            )
            for k, v in head.items():
                self.params[f"level{level}.head.{k}"] = v

    def _level_params(self, level: int, group: str) -> dict:
        prefix = f"level{level}.{group}."
        plen = len(prefix)
        return {k[plen:]: v for k, v in self.params.items() if k.startswith(prefix)}

    def forward(self, img_a: Tensor, img_b: Tensor) -> ForwardResult:
        cfg = self.config
        pa = backbone.extract_pyramid(img_a, self.params, self.stage_configs)
        pb = backbone.extract_pyramid(img_b, self.params, self.stage_configs)
        za, zb = cross_attention.cross_nonlocal(pa.f3, pb.f3, self.nonlocal_params)
        sizes = cfg.level_sizes()
        stage_offsets = []
        totals = []
        homs = []
        h3_feature = None
        total = None
        for level, (src, tgt) in zip((3, 2, 1), ((za, zb), (pa.f2, pb.f2), (pa.f1, pb.f1))):
            size = sizes[level - 1]
            if total is None:
                warped_src = src
            else:
                h_img = homs[-1]
                scale = size / cfg.patch
                h_feat = geometry.scale_homography(h_img, scale, scale)
                # sample src at the forward grid so it moves toward the target
                warped_src = geometry.warp(src, geometry.inverse3x3(h_feat))
            vol = correlation.correlation_volume(warped_src, tgt, max_hw=cfg.corr_max_hw)
            vol = correlation.channel_attention(vol, self._level_params(level, "chattn"))
            offs = correlation.regress_offsets(vol, self._level_params(level, "head"))
            stage_offsets.append(offs)
            total = offs if total is None else ops.add(total, offs)
            totals.append(total)
            hom = geometry.solve_dlt(total, cfg.patch, cfg.patch)
            homs.append(hom)
            if level == 3:
                s3 = sizes[2] / cfg.patch
                h3_feature = geometry.scale_homography(hom, s3, s3)
        return ForwardResult(stage_offsets, totals, homs, za, zb, h3_feature)

    def predict_offsets(self, img_a: np.ndarray, img_b: np.ndarray) -> np.ndarray:
        """Total corner offsets [B,8] for numpy image batches (no tape)."""
        ia = Tensor(_to_batch(img_a))
        ib = Tensor(_to_batch(img_b))
        return self.forward(ia, ib).final_offsets.data

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state_arrays(self, arrays: dict) -> None:
        missing = [k for k in self.params if k not in arrays]
        if missing:
            raise KeyError(f"checkpoint is missing {len(missing)} parameters, e.g. {missing[:3]}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint entry {name} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr


def _to_batch(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        arr = arr[:, :, :, None]
    return arr
