"""
Feature inversion: optimize a deep image prior (a CNN fed fixed noise) so
the ViT feature of its output matches the target's feature.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Tuple

import torch
from PIL import ImageDraw
import torchvision.transforms.functional as TF
from torchvision.utils import make_grid
from tqdm import tqdm

from extractor.features import self_similarity
from extractor.vit_backend import VitExtractor, forward_features
from generators.splice_unet import SpliceGeneratorConfig, build_splice_generator
from training.augment import resize_square
from utils.errors import ConfigError, InversionDiverged, MissingLayerError, NumericalAbort, SpliceError
from utils.image_io import save_image

logger = logging.getLogger(__name__)

FEATURE_KINDS = ("cls", "keys", "selfsim")
PARAMETERIZATIONS = ("prior", "pixels")

PRIOR_CONFIG = SpliceGeneratorConfig(
    in_channels=32,
    encoder_channels=(16, 32, 64, 128),
    skip_channels=(4, 4, 4, 4),
)


@dataclass(frozen=True)
class InversionConfig:
    feature_selector: str = "cls@12"
    steps: int = 2000
    lr: float = 1e-3
    prior_seed: int = 0
    output_size: int = 224
    parameterization: str = "prior"
    noise_scale: float = 0.1
    divergence_factor: float = 10.0
    divergence_patience: int = 50
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0 or not self.lr > 0 or self.output_size < 1:
            raise ConfigError("steps must be >= 0, lr > 0 and output_size >= 1")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"parameterization must be one of {PARAMETERIZATIONS}")
        kind, _, layer = self.feature_selector.partition("@")
        if kind not in FEATURE_KINDS or not layer:
            raise ConfigError(
                f"feature selector {self.feature_selector!r} must look like <kind>@<layer>, kind in {FEATURE_KINDS}"
            )


@dataclass
class InversionResult:
    image: torch.Tensor
    trace: List[float]
    selector: str

    @property
    def initial_loss(self) -> float:
        return self.trace[0]

    @property
    def final_loss(self) -> float:
        return self.trace[-1]


@dataclass
class LayerInversions:
    results: Dict[int, InversionResult] = field(default_factory=dict)
    failures: Dict[int, SpliceError] = field(default_factory=dict)


def parse_selector(selector: str, num_layers: int) -> Tuple[str, int]:
    """'keys@12' -> ('keys', 12); 'L' or 'last' name the deepest layer"""
    kind, _, layer = selector.partition("@")
    if kind not in FEATURE_KINDS:
        raise ConfigError(f"unknown feature kind {kind!r} in {selector!r}; choose from {FEATURE_KINDS}")
    if layer.lower() in ("l", "last"):
        return kind, num_layers
    try:
        index = int(layer)
    except ValueError as exc:
        raise ConfigError(f"bad layer {layer!r} in feature selector {selector!r}") from exc
    if not 1 <= index <= num_layers:
        raise MissingLayerError(f"layer {index} of {selector!r} is outside 1..{num_layers}")
    return kind, index


def feature_of(extractor: VitExtractor, image: torch.Tensor, kind: str, layer: int) -> torch.Tensor:
    features = forward_features(extractor, image, [layer])
    if kind == "cls":
        return features.tokens(layer)[..., 0, :]
    if kind == "keys":
        return features.keys(layer)
    return self_similarity(features.keys(layer)).matrix


class PixelImage(torch.nn.Module):
    """Direct pixel parameterization (no prior); the noise input is ignored"""

    def __init__(self, size: int, generator: torch.Generator):
        super().__init__()
        self.logits = torch.nn.Parameter(0.1 * torch.randn(1, 3, size, size, generator=generator))

    def forward(self, z: torch.Tensor = None) -> torch.Tensor:
        return torch.sigmoid(self.logits)


def build_prior(config: InversionConfig) -> Tuple[torch.nn.Module, torch.Tensor]:
    """The seeded network and its fixed noise input"""
    rng = torch.Generator().manual_seed(config.prior_seed)
    size = config.output_size
    if config.parameterization == "pixels":
        return PixelImage(size, rng), torch.zeros(1, 1, size, size)
    PRIOR_CONFIG.check_side(size, "inversion output")
    noise = config.noise_scale * torch.rand(1, PRIOR_CONFIG.in_channels, size, size, generator=rng)
    return build_splice_generator(PRIOR_CONFIG, seed=config.prior_seed), noise


def invert_feature(target_image: torch.Tensor, config: InversionConfig, extractor: VitExtractor,
                   device: torch.device = None, progress: bool = False) -> InversionResult:
    """
    Minimize ||phi(f(z)) - phi(target)||_F over the prior's weights.

    Returns:
        InversionResult whose trace holds the loss before every step plus the final loss
    """
    device = torch.device(device or "cpu")
    patch = extractor.config.patch_size
    if config.output_size % patch:
        raise ConfigError(f"output_size {config.output_size} is not a multiple of patch size {patch}")
    kind, layer = parse_selector(config.feature_selector, extractor.config.num_layers)

    target = resize_square(target_image, config.output_size).to(device)
    with torch.no_grad():
        target_feature = feature_of(extractor, target, kind, layer)

    prior, noise = build_prior(config)
    prior.to(device).train()
    noise = noise.to(device)
    optimizer = torch.optim.Adam(prior.parameters(), lr=config.lr)

    def loss_of(image):
        return torch.linalg.vector_norm(feature_of(extractor, image[0], kind, layer) - target_feature)

    trace: List[float] = []
    over = 0
    for step in tqdm(range(config.steps), desc=f"invert {config.feature_selector}", disable=not progress):
        loss = loss_of(prior(noise))
        value = float(loss)
        trace.append(value)
        if not torch.isfinite(loss):
            raise NumericalAbort(f"inversion loss is {value} at step {step}", iteration=step,
                                 term="feature", trace=trace)
        initial = trace[0]
        over = over + 1 if value > config.divergence_factor * initial else 0
        if over >= config.divergence_patience:
            raise InversionDiverged(
                f"{config.feature_selector}: loss above {config.divergence_factor}x the initial "
                f"{initial:.4g} for {over} consecutive steps (step {step})",
                iteration=step, term="feature", trace=trace,
            )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if step % config.log_every == 0:
            logger.debug("%s step %d: %.5f", config.feature_selector, step, value)

    with torch.no_grad():
        image = prior(noise)
        trace.append(float(loss_of(image)))
    logger.info("Inverted %s: loss %.4g -> %.4g over %d steps",
                config.feature_selector, trace[0], trace[-1], config.steps)
    return InversionResult(image=image[0].clamp(0, 1).cpu(), trace=trace, selector=config.feature_selector)


def invert_cls_across_layers(target_image: torch.Tensor, layers: Iterable[int], config: InversionConfig,
                             extractor: VitExtractor, device: torch.device = None,
                             progress: bool = False) -> LayerInversions:
    """One [CLS] inversion per layer; a failing layer is logged and the rest still run"""
    outcome = LayerInversions()
    for layer in sorted(set(layers)):
        layer_config = replace(config, feature_selector=f"cls@{layer}")
        try:
            outcome.results[layer] = invert_feature(target_image, layer_config, extractor, device, progress)
        except SpliceError as exc:
            logger.warning("Inversion at layer %d failed: %s", layer, exc)
            outcome.failures[layer] = exc
    return outcome


def _label(image: torch.Tensor, text: str) -> torch.Tensor:
    tile = TF.to_pil_image(image.clamp(0, 1))
    draw = ImageDraw.Draw(tile)
    draw.rectangle([0, 0, 6 * len(text) + 4, 12], fill=(0, 0, 0))
    draw.text((2, 1), text, fill=(255, 255, 255))
    return TF.to_tensor(tile)


def render_inversion_grid(inversions: LayerInversions, path, target: torch.Tensor = None):
    """Write the per-layer results (target first when given) as one labeled PNG grid"""
    tiles = []
    if target is not None:
        size = next(iter(inversions.results.values())).image.shape[-1] if inversions.results else target.shape[-1]
        tiles.append(_label(resize_square(target, size), "target"))
    for layer, result in sorted(inversions.results.items()):
        tiles.append(_label(result.image, f"layer {layer}"))
    if not tiles:
        raise ConfigError("no inversion results to render")
    return save_image(make_grid(tiles, nrow=len(tiles), padding=2), path)
