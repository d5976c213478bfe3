"""Scaled-down ConvNext-style encoder producing four multi-scale feature maps.

Block order: 7x7 depthwise conv -> channel layer norm -> 1x1 expand to 4C ->
GELU -> 1x1 project back to C -> residual add. The stem is a stride-4 patch
embedding and each inter-stage downsample is layer norm + a stride-2 patch
embedding, following the standard ConvNext layout. No stochastic depth or
layer scale. A plain 3x3 conv-norm-ReLU block is available as the ablation
replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import ChannelLayerNorm, Conv2d, PatchDown, collect_parameters

EXPANSION = 4  # inner width of a block is always 4*C


@dataclass
class EncoderConfig:
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    stage_depths: tuple[int, int, int, int] = (1, 1, 2, 1)
    stem_stride: int = 4

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.stage_depths = tuple(self.stage_depths)
        if len(self.stage_channels) != 4 or len(self.stage_depths) != 4:
            raise ConfigError("encoder needs exactly 4 stages")
        if any(c < 1 for c in self.stage_channels) or any(d < 1 for d in self.stage_depths):
            raise ConfigError(f"stage channels/depths must be >= 1: "
                              f"{self.stage_channels}, {self.stage_depths}")

    @property
    def total_downsample(self) -> int:
        return self.stem_stride * 2 ** 3

    @classmethod
    def full_scale(cls) -> "EncoderConfig":
        return cls(stage_channels=(96, 192, 384, 768), stage_depths=(3, 3, 9, 3))


class ConvNextBlock:
    """Shape-preserving large-kernel block with a 4x channel expansion."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.depthwise = Conv2d(channels, channels, 7, pad=3, groups=channels, rng=rng)
        self.norm = ChannelLayerNorm(channels)
        self.expand = Conv2d(channels, EXPANSION * channels, 1, rng=rng)
        self.project = Conv2d(EXPANSION * channels, channels, 1, rng=rng)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if x.shape[0] != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got {x.shape[0]}")
        y = self.depthwise(x)
        y = self.norm(y)
        y = self.project(T.gelu(self.expand(y)))
        return y + x

    def parameters(self):
        out = {}
        for name, sub in (("depthwise", self.depthwise), ("norm", self.norm),
                          ("expand", self.expand), ("project", self.project)):
            out.update(collect_parameters(name, sub))
        return out


class PlainBlock:
    """3x3 conv -> norm -> ReLU; the ablation stand-in for a ConvNext block."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.conv = Conv2d(channels, channels, 3, pad=1, rng=rng)
        self.norm = ChannelLayerNorm(channels)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if x.shape[0] != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got {x.shape[0]}")
        return T.relu(self.norm(self.conv(x)))

    def parameters(self):
        out = collect_parameters("conv", self.conv)
        out.update(collect_parameters("norm", self.norm))
        return out


class Encoder:
    """Four-stage encoder; returns one feature map per stage, fine to coarse."""

    def __init__(self, cfg: EncoderConfig, use_convnext: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        ch = cfg.stage_channels
        block_cls = ConvNextBlock if use_convnext else PlainBlock
        self.stem = PatchDown(3, ch[0], cfg.stem_stride, rng)
        self.stages = [[block_cls(ch[i], rng) for _ in range(cfg.stage_depths[i])]
                       for i in range(4)]
        self.down_norms = [ChannelLayerNorm(ch[i]) for i in range(3)]
        self.downs = [PatchDown(ch[i], ch[i + 1], 2, rng) for i in range(3)]

    def __call__(self, img: T.Tensor) -> list[T.Tensor]:
        if img.data.ndim != 3 or img.shape[0] != 3:
            raise ShapeError(f"encoder expects a (3,H,W) image; got {img.shape}")
        _, h, w = img.shape
        d = self.cfg.total_downsample
        if h % d or w % d:
            raise ConfigError(f"input {h}x{w} must be divisible by {d} "
                              f"(stem stride {self.cfg.stem_stride} x 2^3)")
        x = self.stem(img)
        feats = []
        for i in range(4):
            for block in self.stages[i]:
                x = block(x)
            feats.append(x)
            if i < 3:
                x = self.downs[i](self.down_norms[i](x))
        return feats

    def parameters(self):
        out = collect_parameters("stem", self.stem)
        for i in range(4):
            for j, block in enumerate(self.stages[i]):
                out.update(collect_parameters(f"stage{i}.block{j}", block))
        for i in range(3):
            out.update(collect_parameters(f"down{i}.norm", self.down_norms[i]))
            out.update(collect_parameters(f"down{i}.proj", self.downs[i]))
        return out
