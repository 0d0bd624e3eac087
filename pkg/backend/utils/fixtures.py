"""
Procedural fixtures: synthetic images and a tiny randomly initialised ViT,
so tests and demos run without downloads.
"""

import math
from pathlib import Path
from typing import List, Sequence, Tuple

import torch
from transformers import ViTModel

from extractor.vit_backend import VitConfig


def make_image(size: int,
               layout: Tuple[float, float, float] = (0.5, 0.5, 0.3),
               foreground: Sequence[float] = (0.8, 0.3, 0.2),
               background: Sequence[float] = (0.2, 0.3, 0.6),
               texture_freq: float = 0.0,
               noise: float = 0.0,
               seed: int = 0,
               width: int = None) -> torch.Tensor:
    """
    A disc (cx, cy, r in unit coordinates) over a background, optionally
    striped and noisy. Returns a (3, size, width) tensor in [0, 1].
    """
    width = width or size
    ys = torch.linspace(0, 1, size).view(size, 1).expand(size, width)
    xs = torch.linspace(0, 1, width).view(1, width).expand(size, width)
    cx, cy, radius = layout
    mask = (((xs - cx) ** 2 + (ys - cy) ** 2) < radius ** 2).float()

    fg = torch.tensor(foreground, dtype=torch.float32).view(3, 1, 1)
    bg = torch.tensor(background, dtype=torch.float32).view(3, 1, 1)
    if texture_freq:
        stripes = 1.0 + 0.3 * torch.sin(2 * math.pi * texture_freq * (xs + 0.5 * ys))
        fg = fg * stripes
        bg = bg * (2.0 - stripes)
    image = fg * mask + bg * (1 - mask)
    if noise:
        generator = torch.Generator().manual_seed(seed)
        image = image + noise * torch.randn(image.shape, generator=generator)
    return image.clamp(0, 1)


def fixture_pair(size: int = 128) -> Tuple[torch.Tensor, torch.Tensor]:
    """The bundled structure/appearance pair"""
    structure = make_image(size, (0.5, 0.55, 0.3), (0.8, 0.3, 0.2), (0.2, 0.3, 0.6))
    appearance = make_image(size, (0.4, 0.45, 0.25), (0.2, 0.7, 0.3), (0.9, 0.85, 0.5),
                            texture_freq=6, noise=0.02, seed=1)
    return structure, appearance


def synthetic_collection(count: int, size: int = 32, seed: int = 0) -> List[torch.Tensor]:
    """Images with random layouts and palettes"""
    generator = torch.Generator().manual_seed(seed)
    images = []
    for index in range(count):
        params = torch.rand(11, generator=generator).tolist()
        layout = (0.25 + 0.5 * params[0], 0.25 + 0.5 * params[1], 0.15 + 0.2 * params[2])
        images.append(make_image(size, layout, params[3:6], params[6:9],
                                 texture_freq=8 * params[9], noise=0.01, seed=seed + index))
    return images


def tiny_vit_config(weights_source: str = "", **overrides) -> VitConfig:
    values = dict(patch_size=8, num_layers=2, token_dim=32, num_heads=2, mlp_dim=64, image_size=32)
    values.update(overrides)
    return VitConfig(weights_source=str(weights_source), **values)


def write_vit_weights(path, config: VitConfig, seed: int = 0) -> VitConfig:
    """Save randomly initialised weights for config; returns config pointing at them"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        vit = ViTModel(config.to_hf(), add_pooling_layer=False)
    torch.save(vit.state_dict(), path)
    values = {f: getattr(config, f) for f in config.__dataclass_fields__}
    values["weights_source"] = str(path)
    return VitConfig(**values)


def write_tiny_vit(path, seed: int = 0, **overrides) -> VitConfig:
    return write_vit_weights(path, tiny_vit_config(**overrides), seed=seed)
