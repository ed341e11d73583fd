"""Separable-convolution backbone for the spatial branch.

A 3 x 3 stem followed by blocks of depthwise 3 x 3 -> pointwise 1 x 1 -> GELU
-> optional 2 x 2 max pool. Blocks 1-3 are tapped for style features and the
globally pooled last block is the global feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAPER_CHANNELS = (64, 128, 256, 512, 1024)


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = PAPER_CHANNELS
    pool: tuple[bool, ...] | None = None  # per block; default pools after every block
    in_channels: int = 3

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 4:
            raise ValueError("backbone needs at least 4 blocks (three style taps plus one deeper)")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"block channels must strictly increase, got {self.channels}")
        if self.pool is None:
            self.pool = (True,) * len(self.channels)
        self.pool = tuple(bool(p) for p in self.pool)
        if len(self.pool) != len(self.channels):
            raise ValueError("one pooling flag per block is required")

    @classmethod
    def scaled(cls, divisor: int = 1, **kw) -> "BackboneConfig":
        return cls(tuple(max(c // divisor, 1) for c in PAPER_CHANNELS), **kw)

    @property
    def stem_channels(self) -> int:
        return max(self.channels[0] // 2, 1)

    def min_extent(self) -> int:
        return 2 ** sum(self.pool)


class BackboneActivations(NamedTuple):
    b1: Tensor
    b2: Tensor
    b3: Tensor
    gf: Tensor
    taps: tuple[Tensor, ...]  # every block output, b1 first


def init_backbone(config: BackboneConfig, seed: int | np.random.Generator) -> dict[str, np.ndarray]:
    """He-scaled Gaussian weights (variance 2 / fan_in), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    cin, stem = config.in_channels, config.stem_channels
    params["backbone.stem.w"] = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), (3, 3, cin, stem))
    params["backbone.stem.b"] = np.zeros(stem)
    prev = stem
    for i, c in enumerate(config.channels, 1):
        params[f"backbone.block{i}.dw"] = rng.normal(0.0, np.sqrt(2.0 / 9), (3, 3, prev, 1))
        params[f"backbone.block{i}.dw_b"] = np.zeros(prev)
        params[f"backbone.block{i}.pw"] = rng.normal(0.0, np.sqrt(2.0 / prev), (1, 1, prev, c))
        params[f"backbone.block{i}.pw_b"] = np.zeros(c)
        prev = c
    return params


def backbone_forward(image: Tensor, params: dict[str, Tensor], config: BackboneConfig) -> BackboneActivations:
    """Run H x W x 3 (or B x H x W x 3) images through the stem and all blocks."""
    batched = image.ndim == 4
    h, w = image.shape[-3], image.shape[-2]
    need = config.min_extent()
    if h % need or w % need:
        raise ValueError(f"input {h}x{w} is not divisible by the backbone's total downsampling {need}")
    x = T.gelu(T.conv2d(image, params["backbone.stem.w"], padding=1) + params["backbone.stem.b"])
    taps = []
    for i, pool in enumerate(config.pool, 1):
        x = T.conv2d(x, params[f"backbone.block{i}.dw"], padding=1, depthwise=True) + params[f"backbone.block{i}.dw_b"]
        x = T.gelu(T.conv2d(x, params[f"backbone.block{i}.pw"]) + params[f"backbone.block{i}.pw_b"])
        if pool:
            x = T.max_pool2d(x)
        taps.append(x)
    gf = T.global_avg_pool(x, batched=batched)
    return BackboneActivations(taps[0], taps[1], taps[2], gf, tuple(taps))


def receptive_fields(config: BackboneConfig) -> list[int]:
    """Receptive field (pixels) of each block output."""
    rf, jump = 3, 1  # stem
    out = []
    for pool in config.pool:
        rf += 2 * jump  # depthwise 3 x 3
        if pool:
            rf += jump
            jump *= 2
        out.append(rf)
    return out
