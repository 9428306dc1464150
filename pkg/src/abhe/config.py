"""Run configuration: plain key=value files with CLI overrides.

File format: one ``key = value`` per line, ``#`` starts a comment.
Tuples are comma-separated integers (``head_conv = 16,32,64``). Every
key must be a known field; unknown keys are config errors so typos
surface immediately. CLI ``--set key=value`` pairs override file
values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig


class ConfigError(ValueError):
    """Malformed config file, unknown key, or invalid value."""


@dataclass
class RunConfig:
    # model
    patch: int = 64
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
    # loss mix: omega1 weighs the most refined stage; see losses.pixel_loss
    omega1: float = 1.0
    omega2: float = 4.0
    omega3: float = 16.0
    lambda_c: float = 1.0
    lambda_p: float = 10.0
    # optimization: lr(step) = lr0 * lr_decay_rate ** (step / lr_decay_steps)
    lr0: float = 1e-4
    lr_decay_rate: float = 0.97
    lr_decay_steps: int = 1000
    batch_size: int = 8
    iterations: int = 2000
    seed: int = 0
    # bookkeeping
    data: str = ""
    out: str = "runs/default"
    checkpoint_every: int = 1000
    log_every: int = 25
    probe_size: int = 16

    def validate(self, need_data: bool = True) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError(f"blend must lie in [0,1], got {self.blend}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if min(self.omega1, self.omega2, self.omega3, self.lambda_c, self.lambda_p) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.patch % (8 * self.window):
            raise ConfigError(
                f"patch {self.patch} must be divisible by 8*window = {8 * self.window}"
            )
        if need_data:
            if not self.data:
                raise ConfigError("config needs a 'data' path")
            if not Path(self.data).exists():
                raise ConfigError(f"data path does not exist: {self.data}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            patch=self.patch,
            stem_channels=self.stem_channels,
            window=self.window,
            num_heads=self.num_heads,
            mlp_ratio=self.mlp_ratio,
            temperature=self.temperature,
            blend=self.blend,
            head_conv=tuple(self.head_conv),
            head_fc=tuple(self.head_fc),
            attn_bottleneck=self.attn_bottleneck,
            corr_max_hw=self.corr_max_hw,
        )

    def learning_rate(self, step: int) -> float:
        return self.lr0 * self.lr_decay_rate ** (step / self.lr_decay_steps)

    def loss_weights(self):
        """Per-stage pixel weights aligned with [H1, H2, H3] (fine to coarse)."""
        return [self.omega1, self.omega2, self.omega3]

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw, current):
    if isinstance(current, bool):
        return str(raw).lower() in ("1", "true", "yes")
    if isinstance(current, tuple) or isinstance(raw, list):
        parts = raw if isinstance(raw, list) else str(raw).split(",")
        return tuple(int(p) for p in parts)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return str(raw)


def apply_setting(cfg: RunConfig, key: str, raw) -> None:
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r} (known: {', '.join(sorted(_FIELDS))})")
    try:
        setattr(cfg, key, _coerce(key, raw, getattr(cfg, key)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e


def load_config(path=None, overrides=()) -> RunConfig:
    """RunConfig from an optional file plus ``key=value`` override strings."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for ln, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            apply_setting(cfg, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        apply_setting(cfg, key, raw)
    return cfg
