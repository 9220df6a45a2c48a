"""Micro residual encoder with the standard five-stage downsampling schedule.

Stage geometry relative to the input: down_1 1/4, down_2 1/4, down_3 1/8,
down_4 1/16, down_5 1/32. Layer 0 (7x7 stride-2 conv + 3x3 stride-2 max-pool)
downsamples by 4, layer 1 keeps the resolution and layers 2-4 halve it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module, ModuleDict
from .rng import SplitMix64
from .tensor import Tensor

STAGE_SCALES = (4, 4, 8, 16, 32)


@dataclass
class BackboneConfig:
    widths: List[int] = field(default_factory=lambda: [16, 16, 32, 64, 128])
    blocks_per_layer: List[int] = field(default_factory=lambda: [1, 1, 1, 1])
    freeze: bool = False

    def validate(self, path: str = "backbone"):
        if len(self.widths) != 5:
            raise ConfigError(f"{path}.widths: must list 5 channel counts")
        for i, w in enumerate(self.widths):
            if not isinstance(w, int) or w < 4:
                raise ConfigError(f"{path}.widths[{i}]: must be an integer >= 4")
        if len(self.blocks_per_layer) != 4:
            raise ConfigError(f"{path}.blocks_per_layer: must list 4 block counts")
        for i, b in enumerate(self.blocks_per_layer):
            if not isinstance(b, int) or b < 1:
                raise ConfigError(f"{path}.blocks_per_layer[{i}]: must be an integer >= 1")
        return self


class ResidualBlock(Module):
    """relu(bn(conv3x3(relu(bn(conv3x3(x, stride))))) + shortcut(x))."""

    def __init__(self, cin: int, cout: int, stride: int, rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(cout, dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(cout, dtype)
        if stride != 1 or cin != cout:
            self.shortcut = Conv2d(cin, cout, 1, rng, stride=stride, pad=0, dtype=dtype)
        else:
            object.__setattr__(self, "shortcut", None)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.shortcut is None else self.shortcut(x)
        return T.relu(y + skip)


class Stem(Module):
    def __init__(self, cout: int, rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(3, cout, 7, rng, stride=2, pad=3, bias=False, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.maxpool2d(T.relu(self.bn(self.conv(x))), 3, 2, 1)


class Layer(Module):
    def __init__(self, cin: int, cout: int, blocks: int, stride: int, rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.blocks = ModuleDict(
            {str(j): ResidualBlock(cin if j == 0 else cout, cout, stride if j == 0 else 1, rng, dtype) for j in range(blocks)}
        )
        self.n = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for j in range(self.n):
            x = self.blocks[j](x)
        return x


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.config = config
        w = config.widths
        self.layer0 = Stem(w[0], rng, dtype)
        self.layer1 = Layer(w[0], w[1], config.blocks_per_layer[0], 1, rng, dtype)
        self.layer2 = Layer(w[1], w[2], config.blocks_per_layer[1], 2, rng, dtype)
        self.layer3 = Layer(w[2], w[3], config.blocks_per_layer[2], 2, rng, dtype)
        self.layer4 = Layer(w[3], w[4], config.blocks_per_layer[3], 2, rng, dtype)

    def __call__(self, img: Tensor) -> List[Tensor]:
        return backbone_forward(img, self)


def normalize_input(img: Tensor) -> Tensor:
    """[0, 1] RGB -> zero-centred with fixed mean 0.5 / std 0.5 per channel."""
    return T.mul(T.sub(img, 0.5), 2.0)


def check_input_size(img: Tensor):
    if img.data.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected an (n, 3, h, w) RGB batch, got shape {img.shape}")
    h, w = img.shape[2:]
    if h % 32 or w % 32:
        raise ShapeError(f"input height and width must be divisible by 32, got {h}x{w}")


def backbone_forward(img: Tensor, backbone: Backbone) -> List[Tensor]:
    """Return the feature pyramid [down_1, ..., down_5]."""
    check_input_size(img)
    x = normalize_input(img)
    d1 = backbone.layer0(x)
    d2 = backbone.layer1(d1)
    d3 = backbone.layer2(d2)
    d4 = backbone.layer3(d3)
    d5 = backbone.layer4(d4)
    return [d1, d2, d3, d4, d5]
