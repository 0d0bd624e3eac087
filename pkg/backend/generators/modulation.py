"""
Token-driven weight modulation: the mapping network and the modulated
convolution used throughout SpliceNet.
"""

import math
from dataclasses import dataclass, field
from typing import Dict

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModulationVector:
    """Mapping-network output and the per-convolution affine scales derived from it"""
    vector: torch.Tensor
    styles: Dict[str, torch.Tensor] = field(default_factory=dict)


class MappingNetwork(nn.Module):
    """MLP from the [CLS] token to the modulation vector, GELU after every layer"""

    def __init__(self, in_dim: int = 768, hidden_dim: int = 768, num_layers: int = 2):
        super().__init__()
        layers = []
        for index in range(num_layers):
            layers += [nn.Linear(in_dim if index == 0 else hidden_dim, hidden_dim), nn.GELU()]
        self.net = nn.Sequential(*layers)
        self.in_dim = in_dim
        self.out_dim = hidden_dim

    def forward(self, token: torch.Tensor) -> torch.Tensor:
        return self.net(token)


class ModulatedConv2d(nn.Module):
    """
    Convolution whose input channels are scaled per sample by an affine map of
    the style vector; with demodulate=True each output filter is then
    renormalized by the RMS of its scaled weights.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, style_dim: int,
                 demodulate: bool = True, eps: float = 1e-8):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2
        self.demodulate = demodulate
        self.eps = eps

        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.weight_scale = 1 / math.sqrt(in_channels * kernel_size * kernel_size)
        self.affine = nn.Linear(style_dim, in_channels)
        nn.init.ones_(self.affine.bias)
        self.bias = nn.Parameter(torch.zeros(out_channels))

    def modulated_weight(self, style: torch.Tensor) -> torch.Tensor:
        scales = self.affine(style)  # (N, in)
        weight = self.weight_scale * self.weight.unsqueeze(0) * scales[:, None, :, None, None]
        if self.demodulate:
            demod = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + self.eps)
            weight = weight * demod[:, :, None, None, None]
        return weight

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        batch, channels, height, width = x.shape
        if style.dim() == 1:
            style = style.unsqueeze(0)
        if style.shape[0] != batch:
            style = style.expand(batch, -1)

        weight = self.modulated_weight(style).reshape(
            batch * self.out_channels, channels, self.kernel_size, self.kernel_size
        )
        out = F.conv2d(x.reshape(1, batch * channels, height, width), weight,
                       padding=self.padding, groups=batch)
        out = out.reshape(batch, self.out_channels, height, width)
        return out + self.bias.view(1, -1, 1, 1)

    def extra_repr(self) -> str:
        return (f"{self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
                f"demodulate={self.demodulate}")


class StyledConv2d(nn.Module):
    """Plain convolution with the modulated call signature (style is ignored)"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)

    def forward(self, x: torch.Tensor, style: torch.Tensor = None) -> torch.Tensor:
        return self.conv(x)
