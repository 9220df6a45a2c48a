"""Two-branch iterative refinement decoder and the full-resolution baseline.

Level bookkeeping (``i`` counts down from 5 to 0):

* ``upI_5 = down_5``; ``upII_5 = conv1x1(upI_5)``.
* ``upI_i = shuffle_r(relu(bn(conv1x1(upI_{i+1} [+ upII_{i+1}]))))`` with
  ``r = 2, 2, 2, 1, 4`` for ``i = 4 .. 0``.
* ``upII_i = BI_f(upII_{i+1}) + conv_k(concat(down_i, BI_f(upII_{i+1}), upI_i))``
  with the same factors; level 0 has no backbone feature to concatenate.

With input size ``h`` the depth maps come out at ``h/32, h/16, h/8, h/4, h/4, h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, backbone_forward, check_input_size
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module, ModuleDict, count_parameters
from .rng import SplitMix64
from .tensor import Tensor

LEVELS = (4, 3, 2, 1, 0)
# factor carrying level i+1 to level i, for both the pixel shuffle and BI
LEVEL_FACTOR = {4: 2, 3: 2, 2: 2, 1: 1, 0: 4}
LEVEL_SCALE = {5: 32, 4: 16, 3: 8, 2: 4, 1: 4, 0: 1}

DIAGONAL_READINGS = ("upii_to_upi", "upi_to_correction")


@dataclass
class DecoderConfig:
    upI_widths: List[int] = field(default_factory=lambda: [32, 32, 16, 16, 16])
    correction_kernel: int = 1
    diagonal_connections: bool = True
    auxiliary_outputs: bool = True
    second_branch: bool = True
    # Experimental: which cross-branch edge the diagonal switch removes.
    # "upii_to_upi" feeds upII_{i+1} into the upI step (default);
    # "upi_to_correction" instead gates upI_i's entry into the correction concat.
    diagonal_reading: str = "upii_to_upi"

    def validate(self, path: str = "decoder"):
        if len(self.upI_widths) != 5:
            raise ConfigError(f"{path}.upI_widths: must list 5 channel counts (upI_4 .. upI_0)")
        for i, w in enumerate(self.upI_widths):
            if not isinstance(w, int) or w < 1:
                raise ConfigError(f"{path}.upI_widths[{i}]: must be a positive integer")
        if self.correction_kernel not in (1, 3, 5):
            raise ConfigError(f"{path}.correction_kernel: must be 1, 3, or 5")
        if self.diagonal_reading not in DIAGONAL_READINGS:
            raise ConfigError(f"{path}.diagonal_reading: must be one of {', '.join(DIAGONAL_READINGS)}")
        return self

    def width(self, level: int) -> int:
        return self.upI_widths[4 - level]


@dataclass
class DepthPyramid:
    """Depth maps keyed by level (5 = coarsest, 0 = input resolution)."""

    levels: Dict[int, Tensor]

    @property
    def final(self) -> Tensor:
        return self.levels[0]

    def sizes(self) -> List[tuple]:
        return [self.levels[i].shape[2:] for i in sorted(self.levels, reverse=True)]


class UpIBlock(Module):
    """conv1x1 -> batchnorm -> relu -> pixel shuffle."""

    def __init__(self, cin: int, width: int, r: int, rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.r = r
        self.conv = Conv2d(cin, width * r * r, 1, rng, dtype=dtype)
        self.bn = BatchNorm2d(width * r * r, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.pixel_shuffle(T.relu(self.bn(self.conv(x))), self.r)


class DRDecoder(Module):
    def __init__(self, config: DecoderConfig, down_widths: List[int], rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.config = config
        cfg = config
        cross_input = cfg.second_branch and cfg.diagonal_connections and cfg.diagonal_reading == "upii_to_upi"
        upI_channels = {5: down_widths[4]}
        blocks = {}
        for level in LEVELS:
            cin = upI_channels[level + 1] + (1 if cross_input else 0)
            blocks[str(level)] = UpIBlock(cin, cfg.width(level), LEVEL_FACTOR[level], rng, dtype)
            upI_channels[level] = cfg.width(level)
        self.upI = ModuleDict(blocks)

        if cfg.second_branch:
            self.head5 = Conv2d(down_widths[4], 1, 1, rng, dtype=dtype)
            feed_upI = cfg.diagonal_reading == "upii_to_upi" or cfg.diagonal_connections
            corr = {}
            for level in LEVELS:
                cin = 1
                if level >= 1:
                    cin += down_widths[level - 1]
                if feed_upI:
                    cin += upI_channels[level]
                corr[str(level)] = Conv2d(cin, 1, cfg.correction_kernel, rng, dtype=dtype)
            self.corr = ModuleDict(corr)
        else:
            self.head0 = Conv2d(upI_channels[0], 1, 1, rng, dtype=dtype)

    @property
    def cross_input(self) -> bool:
        c = self.config
        return c.diagonal_connections and c.diagonal_reading == "upii_to_upi"

    @property
    def feed_upI(self) -> bool:
        c = self.config
        return c.diagonal_reading == "upii_to_upi" or c.diagonal_connections


def initial_depth_head(upI_5: Tensor, decoder: DRDecoder) -> Tensor:
    return decoder.head5(upI_5)


def upI_step(level: int, upI_prev: Tensor, upII_prev: Optional[Tensor], decoder: DRDecoder) -> Tensor:
    # upII_{i+1} and upI_{i+1} share a scale, so the diagonal edge needs no resampling
    if upII_prev is not None and decoder.config.second_branch and decoder.cross_input:
        x = T.concat_channels([upI_prev, upII_prev])
    else:
        x = upI_prev
    return decoder.upI[level](x)


def correction_term(level: int, down_i: Optional[Tensor], upII_up: Tensor, upI_i: Tensor, decoder: DRDecoder) -> Tensor:
    parts = [] if down_i is None else [down_i]
    parts.append(upII_up)
    if decoder.feed_upI:
        parts.append(upI_i)
    return decoder.corr[level](T.concat_channels(parts))


def upII_step(level: int, upII_up: Tensor, correction: Tensor) -> Tensor:
    if upII_up.shape != correction.shape:
        raise ShapeError(f"upII level {level}: upsampled depth {upII_up.shape} vs correction {correction.shape}")
    return T.add(upII_up, correction)


def decoder_forward(down: List[Tensor], decoder: DRDecoder) -> DepthPyramid:
    cfg = decoder.config
    upI = down[4]
    if not cfg.second_branch:
        for level in LEVELS:
            upI = upI_step(level, upI, None, decoder)
        return DepthPyramid({0: decoder.head0(upI)})

    upII = initial_depth_head(upI, decoder)
    levels = {5: upII}
    for level in LEVELS:
        upI = upI_step(level, upI, upII, decoder)
        upII_up = T.bilinear_upsample(upII, LEVEL_FACTOR[level])
        down_i = down[level - 1] if level >= 1 else None
        corr = correction_term(level, down_i, upII_up, upI, decoder)
        upII = upII_step(level, upII_up, corr)
        levels[level] = upII
    return DepthPyramid(levels)


class DRNet(Module):
    """Backbone plus refinement decoder; parameters are seeded by SplitMix64."""

    def __init__(self, backbone: BackboneConfig = None, decoder: DecoderConfig = None, seed: int = 0, dtype=np.float32):
        super().__init__()
        backbone = backbone or BackboneConfig()
        decoder = decoder or DecoderConfig()
        backbone.validate()
        decoder.validate()
        rng = SplitMix64(seed)
        self.dtype = np.dtype(dtype)
        self.backbone_config = backbone
        self.decoder_config = decoder
        self.backbone = Backbone(backbone, rng, dtype)
        self.decoder = DRDecoder(decoder, backbone.widths, rng, dtype)
        self.assign_names()

    def __call__(self, img: Tensor) -> DepthPyramid:
        return drnet_forward(img, self)

    def decoder_parameter_names(self):
        return [n for n, _ in self.named_parameters() if n.startswith("decoder.")]


def drnet_forward(img: Tensor, model: DRNet) -> DepthPyramid:
    check_input_size(img)
    down = backbone_forward(img, model.backbone)
    return decoder_forward(down, model.decoder)


class FullResDecoder(Module):
    """Baseline decoder: every backbone map interpolated to input size, concatenated, 1x1 conv."""

    # BI steps taking each stage to full resolution (x2 repeats then one x4)
    CHAINS = ((4,), (4,), (2, 4), (2, 2, 4), (2, 2, 2, 4))

    def __init__(self, down_widths: List[int], rng: SplitMix64, dtype=np.float32):
        super().__init__()
        self.head = Conv2d(int(sum(down_widths)), 1, 1, rng, dtype=dtype)


class FullResNet(Module):
    """Full-resolution-interpolation baseline sharing a backbone instance with a DRNet."""

    def __init__(self, backbone: Backbone, seed: int = 1, dtype=np.float32):
        super().__init__()
        object.__setattr__(self, "backbone", backbone)  # shared, not owned
        self.decoder = FullResDecoder(backbone.config.widths, SplitMix64(seed), dtype)
        self.decoder.assign_names("fullres.")

    def __call__(self, img: Tensor) -> Tensor:
        return fullres_forward(img, self)


def fullres_upsample(down: List[Tensor]) -> List[Tensor]:
    ups = []
    for d, chain in zip(down, FullResDecoder.CHAINS):
        for f in chain:
            d = T.bilinear_upsample(d, f)
        ups.append(d)
    return ups


def fullres_forward(img: Tensor, model: FullResNet) -> Tensor:
    check_input_size(img)
    down = backbone_forward(img, model.backbone)
    cat = T.concat_channels(fullres_upsample(down))
    return model.decoder.head(cat)


def decoder_parameter_count(model) -> int:
    return count_parameters(model.decoder)
