"""
Frozen self-supervised ViT feature extractor.

Loads ViT weights (Hugging Face naming or the DINO release
naming) into a transformers ViTModel and exposes a differentiable forward pass
that records, for each requested layer l, the block output tokens T^l and the
query/key/value projections of LN(T^{l-1}).
"""

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import torch
from torch import nn
from transformers import ViTConfig as HFViTConfig
from transformers import ViTModel

from utils.errors import MissingLayerError, ShapeError, VitConfigError, WeightsLoadError

logger = logging.getLogger(__name__)

WEIGHT_SUFFIXES = (".safetensors", ".bin", ".pt", ".pth")
HUB_WEIGHT_FILES = ("model.safetensors", "pytorch_model.bin")

# Normalization statistics the released extractor was trained with
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class VitConfig:
    """Shape and provenance of the frozen extractor (defaults: ViT-B/8)"""
    patch_size: int = 8
    num_layers: int = 12
    token_dim: int = 768
    num_heads: int = 12
    mlp_dim: int = 3072
    image_size: int = 224
    layer_norm_eps: float = 1e-6
    image_mean: Tuple[float, float, float] = IMAGENET_MEAN
    image_std: Tuple[float, float, float] = IMAGENET_STD
    weights_source: str = "facebook/dino-vitb8"

    def __post_init__(self):
        if self.patch_size < 1 or self.num_layers < 1 or self.token_dim < 1:
            raise VitConfigError(
                f"patch_size, num_layers and token_dim must be >= 1, got "
                f"({self.patch_size}, {self.num_layers}, {self.token_dim})"
            )
        if self.num_heads < 1 or self.token_dim % self.num_heads:
            raise VitConfigError(f"token_dim {self.token_dim} is not divisible into {self.num_heads} heads")
        if self.image_size % self.patch_size:
            raise VitConfigError(f"image_size {self.image_size} is not a multiple of patch_size {self.patch_size}")
        if len(self.image_mean) != 3 or len(self.image_std) != 3 or min(self.image_std) <= 0:
            raise VitConfigError("image_mean/image_std must hold three values with positive std")

    def to_hf(self) -> HFViTConfig:
        return HFViTConfig(
            hidden_size=self.token_dim,
            num_hidden_layers=self.num_layers,
            num_attention_heads=self.num_heads,
            intermediate_size=self.mlp_dim,
            hidden_act="gelu",
            hidden_dropout_prob=0.0,
            attention_probs_dropout_prob=0.0,
            layer_norm_eps=self.layer_norm_eps,
            image_size=self.image_size,
            patch_size=self.patch_size,
            num_channels=3,
            qkv_bias=True,
        )


@dataclass
class LayerFeatures:
    """
    Per-layer features of one image (rows: [CLS], then spatial tokens in raster
    order) or of a batch (leading batch dimension).
    """
    tokens_per_layer: Dict[int, torch.Tensor]
    keys_per_layer: Dict[int, torch.Tensor]
    queries_per_layer: Dict[int, torch.Tensor]
    values_per_layer: Dict[int, torch.Tensor]
    n: int
    grid_shape: Tuple[int, int] = field(default=(0, 0))

    @property
    def layers(self):
        return sorted(self.tokens_per_layer)

    def _get(self, table: Dict[int, torch.Tensor], layer: int, kind: str) -> torch.Tensor:
        if layer not in table:
            raise MissingLayerError(f"{kind} of layer {layer} were not captured (captured: {self.layers})")
        return table[layer]

    def tokens(self, layer: int) -> torch.Tensor:
        return self._get(self.tokens_per_layer, layer, "tokens")

    def keys(self, layer: int) -> torch.Tensor:
        return self._get(self.keys_per_layer, layer, "keys")

    def queries(self, layer: int) -> torch.Tensor:
        return self._get(self.queries_per_layer, layer, "queries")

    def values(self, layer: int) -> torch.Tensor:
        return self._get(self.values_per_layer, layer, "values")


class VitExtractor(nn.Module):
    """A frozen ViT plus the input normalization it expects"""

    def __init__(self, config: VitConfig, vit: ViTModel):
        super().__init__()
        self.config = config
        self.vit = vit
        self.register_buffer("mean", torch.tensor(config.image_mean).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(config.image_std).view(1, 3, 1, 1), persistent=False)

    @property
    def deepest_layer(self) -> int:
        return self.config.num_layers

    def train(self, mode: bool = True):
        # always inference mode; the extractor is never trained
        return super().train(False)

    def forward(self, image: torch.Tensor, layers: Iterable[int] = None) -> LayerFeatures:
        return forward_features(self, image, layers)

    def cls_token(self, image: torch.Tensor, layer: int = None) -> torch.Tensor:
        layer = layer or self.deepest_layer
        return forward_features(self, image, [layer]).tokens(layer)[..., 0, :]

    def keys(self, image: torch.Tensor, layer: int = None) -> torch.Tensor:
        layer = layer or self.deepest_layer
        return forward_features(self, image, [layer]).keys(layer)

    def self_similarity(self, image: torch.Tensor, layer: int = None):
        from extractor.features import self_similarity
        return self_similarity(self.keys(image, layer))


def _shape_mismatch_message(config: VitConfig, name: str, expected, found) -> str:
    return (
        f"tensor '{name}' has shape {tuple(found)} in {config.weights_source} but the config "
        f"(patch_size={config.patch_size}, num_layers={config.num_layers}, token_dim={config.token_dim}) "
        f"expects {tuple(expected)}"
    )


def _is_local_path(source: str) -> bool:
    return source.endswith(WEIGHT_SUFFIXES) or source.startswith((".", "/", "~")) or Path(source).exists()


def _read_weight_file(path: Path) -> Dict[str, torch.Tensor]:
    try:
        if path.suffix == ".safetensors":
            from safetensors.torch import load_file
            state = load_file(str(path))
        else:
            state = torch.load(str(path), map_location="cpu")
    except Exception as exc:
        raise WeightsLoadError(f"cannot read weight file {path}: {exc}") from exc

    # unwrap training checkpoints
    for wrapper in ("teacher", "state_dict", "model"):
        if isinstance(state, dict) and wrapper in state and isinstance(state[wrapper], dict):
            state = state[wrapper]
    if not isinstance(state, dict):
        raise WeightsLoadError(f"weight file {path} does not contain a tensor dictionary")
    return state


def _resolve_weight_file(source: str) -> Path:
    if _is_local_path(source):
        path = Path(source).expanduser()
        if path.is_dir():
            for candidate in HUB_WEIGHT_FILES:
                if (path / candidate).is_file():
                    return path / candidate
            raise WeightsLoadError(f"no weight file ({', '.join(HUB_WEIGHT_FILES)}) in directory {path}")
        if not path.is_file():
            raise WeightsLoadError(f"weight file not found: {path}")
        return path

    from huggingface_hub import hf_hub_download

    last_error = None
    for filename in HUB_WEIGHT_FILES:
        try:
            return Path(hf_hub_download(repo_id=source, filename=filename))
        except Exception as exc:
            last_error = exc
            logger.debug("hub file %s/%s unavailable: %s", source, filename, exc)
    raise WeightsLoadError(f"cannot download weights for '{source}': {last_error}")


def convert_release_state_dict(state: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """Rename original-release keys (blocks.N.attn.qkv ...) to the transformers ViT layout"""
    converted = {}
    renames = {
        "cls_token": "embeddings.cls_token",
        "pos_embed": "embeddings.position_embeddings",
        "patch_embed.proj.weight": "embeddings.patch_embeddings.projection.weight",
        "patch_embed.proj.bias": "embeddings.patch_embeddings.projection.bias",
        "norm.weight": "layernorm.weight",
        "norm.bias": "layernorm.bias",
    }
    block_renames = {
        "norm1": "layernorm_before",
        "norm2": "layernorm_after",
        "attn.proj": "attention.output.dense",
        "mlp.fc1": "intermediate.dense",
        "mlp.fc2": "output.dense",
    }
    block_pattern = re.compile(r"^blocks\.(\d+)\.(.+)\.(weight|bias)$")

    for key, tensor in state.items():
        if key in renames:
            converted[renames[key]] = tensor
            continue
        match = block_pattern.match(key)
        if not match:
            # projection heads and the like are not part of the backbone
            continue
        index, module, kind = match.groups()
        prefix = f"encoder.layer.{index}"
        if module == "attn.qkv":
            query, key_part, value = tensor.chunk(3, dim=0)
            converted[f"{prefix}.attention.attention.query.{kind}"] = query
            converted[f"{prefix}.attention.attention.key.{kind}"] = key_part
            converted[f"{prefix}.attention.attention.value.{kind}"] = value
        elif module in block_renames:
            converted[f"{prefix}.{block_renames[module]}.{kind}"] = tensor
    return converted


def _normalize_state_dict(state: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    stripped = {}
    for key, tensor in state.items():
        for prefix in ("module.", "backbone.", "vit."):
            if key.startswith(prefix):
                key = key[len(prefix):]
        stripped[key] = tensor
    if any(k.startswith("blocks.") for k in stripped) or "patch_embed.proj.weight" in stripped:
        stripped = convert_release_state_dict(stripped)
    return stripped


def load_vit(config: VitConfig, device: Optional[torch.device] = None) -> VitExtractor:
    """
    Build the ViT described by config and fill it from config.weights_source.

    Raises WeightsLoadError for missing/corrupt files or tensors and
    VitConfigError when a tensor's shape disagrees with the config.
    """
    weight_file = _resolve_weight_file(config.weights_source)
    state = _normalize_state_dict(_read_weight_file(weight_file))

    vit = ViTModel(config.to_hf(), add_pooling_layer=False)
    expected = vit.state_dict()
    for name, reference in expected.items():
        if name not in state:
            raise WeightsLoadError(f"weight file {weight_file} is missing tensor '{name}'")
        tensor = state[name]
        if not isinstance(tensor, torch.Tensor):
            raise WeightsLoadError(f"entry '{name}' of {weight_file} is not a tensor")
        if tuple(tensor.shape) != tuple(reference.shape):
            raise VitConfigError(_shape_mismatch_message(config, name, reference.shape, tensor.shape))
        if not torch.isfinite(tensor).all():
            raise WeightsLoadError(f"tensor '{name}' in {weight_file} holds non-finite values")
    unused = sorted(set(state) - set(expected))
    if unused:
        logger.debug("ignoring %d tensors not used by the backbone: %s", len(unused), unused[:5])

    vit.load_state_dict({name: state[name] for name in expected}, strict=True)
    extractor = VitExtractor(config, vit)
    extractor.requires_grad_(False)
    extractor.eval()
    if device is not None:
        extractor.to(device)
    logger.info("Loaded ViT (%d layers, dim %d, patch %d) from %s",
                config.num_layers, config.token_dim, config.patch_size, weight_file)
    return extractor


# One extractor per (config, device); loading is expensive
_extractors: Dict[Tuple[VitConfig, str], VitExtractor] = {}


def get_extractor(config: VitConfig, device: torch.device = None) -> VitExtractor:
    """Get or load the shared extractor for config"""
    device = torch.device(device or "cpu")
    cache_key = (config, str(device))
    if cache_key not in _extractors:
        _extractors[cache_key] = load_vit(config, device)
    return _extractors[cache_key]


def _validate_layers(model: VitExtractor, layers: Optional[Iterable[int]]):
    if layers is None:
        return list(range(1, model.config.num_layers + 1))
    layers = sorted(set(int(l) for l in layers))
    bad = [l for l in layers if not 1 <= l <= model.config.num_layers]
    if bad:
        raise MissingLayerError(f"layers {bad} outside 1..{model.config.num_layers}")
    return layers


def forward_features(model: VitExtractor, image: torch.Tensor, layers: Iterable[int] = None) -> LayerFeatures:
    """
    Run the frozen ViT on a (3, H, W) or (B, 3, H, W) image in [0, 1].

    H and W must be multiples of the patch size (see training.augment.resize_for_vit).
    Gradients flow to the image only.
    """
    layers = _validate_layers(model, layers)
    single = image.dim() == 3
    batch = image.unsqueeze(0) if single else image
    if batch.dim() != 4 or batch.shape[1] != 3:
        raise ShapeError(f"expected a (3, H, W) or (B, 3, H, W) image, got {tuple(image.shape)}")
    height, width = batch.shape[-2:]
    patch = model.config.patch_size
    if height % patch or width % patch:
        raise ShapeError(
            f"image size {height}x{width} is not divisible by patch size {patch}; resize_for_vit first"
        )

    pixels = (batch - model.mean.to(batch.dtype)) / model.std.to(batch.dtype)
    outputs = model.vit(
        pixel_values=pixels,
        output_hidden_states=True,
        interpolate_pos_encoding=True,
        return_dict=True,
    )
    hidden = outputs.hidden_states

    tokens, keys, queries, values = {}, {}, {}, {}
    for layer in layers:
        block = model.vit.encoder.layer[layer - 1]
        normed = block.layernorm_before(hidden[layer - 1])
        attention = block.attention.attention
        tokens[layer] = hidden[layer]
        queries[layer] = attention.query(normed)
        keys[layer] = attention.key(normed)
        values[layer] = attention.value(normed)

    if single:
        for table in (tokens, keys, queries, values):
            for layer in table:
                table[layer] = table[layer][0]

    grid = (height // patch, width // patch)
    return LayerFeatures(
        tokens_per_layer=tokens,
        keys_per_layer=keys,
        queries_per_layer=queries,
        values_per_layer=values,
        n=grid[0] * grid[1],
        grid_shape=grid,
    )


def parameter_checksum(model: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in name order"""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().to("cpu", torch.float64).contiguous().numpy().tobytes())
    return digest.hexdigest()
