"""
Feed-forward appearance transfer: a residual U-Net whose skip and decoder
convolutions are modulated by a mapping of the target [CLS] token.
"""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from extractor.features import ClsToken, as_tensor
from generators.modulation import MappingNetwork, ModulatedConv2d, ModulationVector, StyledConv2d
from utils.errors import ConfigError, ShapeError

MODULATION_GROUPS = ("skip", "decoder", "output")
REQUIRED_GROUPS = ("skip", "decoder")


@dataclass(frozen=True)
class SpliceNetConfig:
    in_channels: int = 3
    stem_channels: int = 32
    encoder_channels: Tuple[int, ...] = (64, 128, 256, 512, 1024)
    cls_dim: int = 768
    mapping_hidden: int = 768
    mapping_layers: int = 2
    modulated: Tuple[str, ...] = MODULATION_GROUPS
    out_channels: int = 3
    negative_slope: float = 0.2
    demod_eps: float = 1e-8

    def __post_init__(self):
        if self.stem_channels < 1 or not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("stem and encoder channel counts must be positive")
        if self.cls_dim < 1 or self.mapping_hidden < 1 or self.mapping_layers < 1:
            raise ConfigError("cls_dim, mapping_hidden and mapping_layers must be >= 1")
        unknown = set(self.modulated) - set(MODULATION_GROUPS)
        if unknown:
            raise ConfigError(f"unknown modulation groups {sorted(unknown)}; choose from {MODULATION_GROUPS}")
        missing = [g for g in REQUIRED_GROUPS if g not in self.modulated]
        if missing:
            raise ConfigError(f"skip and decoder convolutions are always modulated; missing {missing}")

    @property
    def skip_widths(self) -> Tuple[int, ...]:
        return (self.stem_channels,) + tuple(self.encoder_channels[:-1])


def _lrelu(x: torch.Tensor, slope: float) -> torch.Tensor:
    return F.leaky_relu(x, slope)


class DownResBlock(nn.Module):

    def __init__(self, in_channels: int, out_channels: int, slope: float):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1)
        self.shortcut = nn.Conv2d(in_channels, out_channels, 1, stride=2, bias=False)
        self.slope = slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = _lrelu(self.conv1(x), self.slope)
        h = _lrelu(self.conv2(h), self.slope)
        return (h + self.shortcut(x)) / math.sqrt(2)


class ModulatedResBlock(nn.Module):
    """Two modulated 3x3 convolutions plus a 1x1 shortcut"""

    def __init__(self, in_channels: int, out_channels: int, style_dim: int, slope: float, eps: float):
        super().__init__()
        self.conv1 = ModulatedConv2d(in_channels, out_channels, 3, style_dim, eps=eps)
        self.conv2 = ModulatedConv2d(out_channels, out_channels, 3, style_dim, eps=eps)
        self.shortcut = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.slope = slope

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        h = _lrelu(self.conv1(x, style), self.slope)
        h = _lrelu(self.conv2(h, style), self.slope)
        return (h + self.shortcut(x)) / math.sqrt(2)


class UpBlock(nn.Module):
    """Nearest upsample + conv, concatenate the skip, then a modulated residual block"""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int,
                 style_dim: int, slope: float, eps: float):
        super().__init__()
        self.up_conv = nn.Conv2d(in_channels, in_channels, 3, padding=1)
        self.block = ModulatedResBlock(in_channels + skip_channels, out_channels, style_dim, slope, eps)
        self.slope = slope

    def forward(self, x: torch.Tensor, skip: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
        x = _lrelu(self.up_conv(x), self.slope)
        return self.block(torch.cat([x, skip], dim=1), style)


class SpliceNet(nn.Module):

    def __init__(self, config: SpliceNetConfig):
        super().__init__()
        self.config = config
        slope, eps, style_dim = config.negative_slope, config.demod_eps, config.mapping_hidden

        self.mapping = MappingNetwork(config.cls_dim, config.mapping_hidden, config.mapping_layers)
        self.stem = nn.Conv2d(config.in_channels, config.stem_channels, 1)

        widths = (config.stem_channels,) + tuple(config.encoder_channels)
        self.encoder = nn.ModuleList(
            DownResBlock(widths[i], widths[i + 1], slope) for i in range(len(config.encoder_channels))
        )
        self.skips = nn.ModuleList(
            ModulatedResBlock(c, c, style_dim, slope, eps) for c in config.skip_widths
        )
        self.decoder = nn.ModuleList(
            UpBlock(widths[i + 1], widths[i], widths[i], style_dim, slope, eps)
            for i in reversed(range(len(config.encoder_channels)))
        )
        if "output" in config.modulated:
            self.to_rgb = ModulatedConv2d(config.stem_channels, config.out_channels, 1, style_dim,
                                          demodulate=False)
        else:
            self.to_rgb = StyledConv2d(config.stem_channels, config.out_channels, 1)

    def forward(self, structure: torch.Tensor, token: torch.Tensor) -> torch.Tensor:
        style = self.mapping(token)
        h = _lrelu(self.stem(structure), self.config.negative_slope)
        features = [h]
        for block in self.encoder:
            h = block(h)
            features.append(h)

        skips = [block(f, style) for block, f in zip(self.skips, features[:-1])]
        h = features[-1]
        for block, skip in zip(self.decoder, reversed(skips)):
            h = block(h, skip, style)
        return torch.sigmoid(self.to_rgb(h, style))


def build_splicenet(config: SpliceNetConfig = None, seed: int = 0) -> SpliceNet:
    """Build the token-conditioned generator with parameters initialised from seed"""
    config = config or SpliceNetConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return SpliceNet(config)


def _check_token(model: SpliceNet, token: torch.Tensor) -> torch.Tensor:
    if token.shape[-1] != model.config.cls_dim:
        raise ShapeError(f"token has dimension {token.shape[-1]}, the model expects {model.config.cls_dim}")
    return token


def splicenet_forward(model: SpliceNet, structure: torch.Tensor,
                      cls_target: Union[ClsToken, torch.Tensor]) -> torch.Tensor:
    """
    Render structure with the appearance described by cls_target.

    Args:
        model: SpliceNet
        structure: (3, H, W) or (B, 3, H, W) image in [0, 1]
        cls_target: (D,) or (B, D) token

    Returns:
        Image with the spatial size (and batching) of structure
    """
    token = _check_token(model, as_tensor(cls_target))
    single = structure.dim() == 3
    batch = structure.unsqueeze(0) if single else structure
    if token.dim() == 1:
        token = token.unsqueeze(0).expand(batch.shape[0], -1)
    out = model(batch, token)
    return out[0] if single else out


def mapping_forward(model: SpliceNet, cls: Union[ClsToken, torch.Tensor]) -> ModulationVector:
    """Mapping-network output plus the affine scales of every modulated convolution"""
    token = _check_token(model, as_tensor(cls))
    vector = model.mapping(token)
    styles = {
        name: module.affine(vector)
        for name, module in model.named_modules()
        if isinstance(module, ModulatedConv2d)
    }
    return ModulationVector(vector=vector, styles=styles)
