"""
Resizing for the feature extractor and the pair augmentation policy.
All operations are differentiable tensor ops on (3, H, W) or (B, 3, H, W).
"""

from typing import Tuple

import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from training.config import AugmentPolicy
from utils.errors import ShapeError


def resize_for_vit(image: torch.Tensor, target: int = 224, patch_size: int = 8) -> torch.Tensor:
    """
    Bicubic resize to height target, keeping the aspect ratio with the width
    rounded to the nearest multiple of patch_size.
    """
    height, width = image.shape[-2:]
    if height < patch_size or width < patch_size:
        raise ShapeError(f"image {height}x{width} is smaller than one {patch_size}px patch")
    new_width = max(patch_size, round(width * target / height / patch_size) * patch_size)
    if (height, width) == (target, new_width):
        return image
    return TF.resize(image, [target, new_width], interpolation=InterpolationMode.BICUBIC, antialias=True)


def resize_square(image: torch.Tensor, size: int = 224) -> torch.Tensor:
    if tuple(image.shape[-2:]) == (size, size):
        return image
    return TF.resize(image, [size, size], interpolation=InterpolationMode.BICUBIC, antialias=True)


def _uniform(low: float, high: float, rng: torch.Generator) -> float:
    return low + (high - low) * torch.rand(1, generator=rng).item()


def chance(p: float, rng: torch.Generator) -> bool:
    # always draw, so the stream does not depend on the probabilities
    return torch.rand(1, generator=rng).item() < p


def crop_side(height: int, width: int, fraction: float) -> int:
    return min(max(1, round(fraction * height)), height, width)


def smallest_crop_side(height: int, width: int, crop_range: Tuple[float, float]) -> int:
    """Side of the smallest crop random_square_crop can return for this policy"""
    return crop_side(height, width, crop_range[0])


def random_square_crop(image: torch.Tensor, crop_range: Tuple[float, float], rng: torch.Generator) -> torch.Tensor:
    """N x N crop at a random offset, N a fraction of the height clamped to the shorter side"""
    height, width = image.shape[-2:]
    fraction = _uniform(*crop_range, rng)
    side = crop_side(height, width, fraction)
    top = int(torch.randint(0, height - side + 1, (1,), generator=rng))
    left = int(torch.randint(0, width - side + 1, (1,), generator=rng))
    if tuple(crop_range) == (1.0, 1.0):
        # a full-size crop keeps the whole frame
        return image
    return TF.crop(image, top, left, side, side)


def color_jitter(image: torch.Tensor, policy: AugmentPolicy, rng: torch.Generator) -> torch.Tensor:
    brightness = _uniform(1 - policy.brightness, 1 + policy.brightness, rng)
    contrast = _uniform(1 - policy.contrast, 1 + policy.contrast, rng)
    saturation = _uniform(1 - policy.saturation, 1 + policy.saturation, rng)
    hue = _uniform(-policy.hue, policy.hue, rng)
    image = TF.adjust_brightness(image, brightness)
    image = TF.adjust_contrast(image, contrast)
    image = TF.adjust_saturation(image, saturation)
    return TF.adjust_hue(image, hue)


def augment_pair(structure: torch.Tensor, appearance: torch.Tensor, policy: AugmentPolicy,
                 rng: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Structure: crop, flip, color jitter and blur. Appearance: crop and flip.
    Each image gets its own random draws.
    """
    structure = random_square_crop(structure, policy.crop_range, rng)
    if chance(policy.hflip_p, rng):
        structure = TF.hflip(structure)
    if chance(policy.jitter_p, rng):
        structure = color_jitter(structure, policy, rng)
    if chance(policy.blur_p, rng):
        sigma = _uniform(*policy.blur_sigma, rng)
        structure = TF.gaussian_blur(structure, [policy.blur_kernel] * 2, [sigma, sigma])

    appearance = random_square_crop(appearance, policy.crop_range, rng)
    if chance(policy.hflip_p, rng):
        appearance = TF.hflip(appearance)
    return structure, appearance
