"""
Single-pair generator: an encoder-decoder with per-level skip branches,
batch normalization and a sigmoid output. Also used, with a noise input,
as the deep image prior for feature inversion.
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F
from torch import nn

from utils.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class SpliceGeneratorConfig:
    in_channels: int = 3
    encoder_channels: Tuple[int, ...] = (16, 32, 64, 128, 128)
    skip_channels: Tuple[int, ...] = (4, 4, 4, 4, 4)
    kernel_size: int = 3
    skip_kernel_size: int = 1
    out_channels: int = 3
    negative_slope: float = 0.2

    def __post_init__(self):
        if not self.encoder_channels:
            raise ConfigError("encoder_channels must not be empty")
        if len(self.skip_channels) != len(self.encoder_channels):
            raise ConfigError(
                f"{len(self.skip_channels)} skip widths given for {len(self.encoder_channels)} encoder levels"
            )
        if min(self.encoder_channels) < 1 or min(self.skip_channels) < 0:
            raise ConfigError("channel counts must be positive (skip widths may be 0)")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("in_channels and out_channels must be positive")
        if self.kernel_size % 2 == 0 or self.skip_kernel_size % 2 == 0:
            raise ConfigError("kernel sizes must be odd")

    @property
    def min_side(self) -> int:
        """Smallest input side whose deepest feature map still holds more than one value"""
        return 2 ** len(self.encoder_channels) + 1

    def check_side(self, side: int, what: str = "input"):
        # batch norm in train mode needs more than one value per channel at the deepest level
        if side < self.min_side:
            raise ShapeError(
                f"{what} side {side}px is below the {self.min_side}px a {len(self.encoder_channels)}-level "
                f"generator needs"
            )


def _conv_block(in_channels: int, out_channels: int, kernel_size: int, slope: float, stride: int = 1):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride, padding=kernel_size // 2),
        nn.BatchNorm2d(out_channels),
        nn.LeakyReLU(slope),
    )


class SpliceUNet(nn.Module):

    def __init__(self, config: SpliceGeneratorConfig):
        super().__init__()
        self.config = config
        encoder, skips = config.encoder_channels, config.skip_channels
        slope = config.negative_slope

        self.skips = nn.ModuleList()
        self.downs = nn.ModuleList()
        self.ups = nn.ModuleList()
        in_channels = config.in_channels
        for level, (channels, skip) in enumerate(zip(encoder, skips)):
            self.skips.append(
                _conv_block(in_channels, skip, config.skip_kernel_size, slope) if skip else nn.Identity()
            )
            self.downs.append(nn.Sequential(
                _conv_block(in_channels, channels, config.kernel_size, slope, stride=2),
                _conv_block(channels, channels, config.kernel_size, slope),
            ))
            deeper = encoder[level + 1] if level + 1 < len(encoder) else channels
            self.ups.append(nn.Sequential(
                nn.BatchNorm2d(skip + deeper),
                _conv_block(skip + deeper, channels, config.kernel_size, slope),
                _conv_block(channels, channels, 1, slope),
            ))
            in_channels = channels

        self.to_rgb = nn.Sequential(nn.Conv2d(encoder[0], config.out_channels, 1), nn.Sigmoid())

    def _level(self, level: int, x: torch.Tensor) -> torch.Tensor:
        deep = self.downs[level](x)
        if level + 1 < len(self.downs):
            deep = self._level(level + 1, deep)
        deep = F.interpolate(deep, size=x.shape[-2:], mode="nearest")
        if self.config.skip_channels[level]:
            deep = torch.cat([self.skips[level](x), deep], dim=1)
        return self.ups[level](deep)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        single = x.dim() == 3
        batch = x.unsqueeze(0) if single else x
        out = self.to_rgb(self._level(0, batch))
        return out[0] if single else out


@contextmanager
def frozen_batch_stats(model: nn.Module):
    """Batch norm keeps normalizing with batch statistics but stops updating its running averages"""
    norms = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    saved = [(m.momentum, m.num_batches_tracked.clone() if m.num_batches_tracked is not None else None)
             for m in norms]
    for m in norms:
        m.momentum = 0.0
    try:
        yield model
    finally:
        for m, (momentum, tracked) in zip(norms, saved):
            m.momentum = momentum
            if tracked is not None:
                m.num_batches_tracked.copy_(tracked)


def build_splice_generator(config: SpliceGeneratorConfig = None, seed: int = 0) -> SpliceUNet:
    """Build the single-pair generator with parameters initialised from seed"""
    config = config or SpliceGeneratorConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return SpliceUNet(config)
