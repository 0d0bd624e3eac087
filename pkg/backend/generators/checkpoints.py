"""
Self-describing generator checkpoints: model kind and config, parameters,
optimizer state and the iteration counter in one torch file.
"""

import dataclasses
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import torch
from torch import nn

from generators.splice_unet import SpliceGeneratorConfig, build_splice_generator
from generators.splicenet import SpliceNetConfig, build_splicenet
from utils.errors import CheckpointVersionError, SpliceIOError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

# kind -> (config class, builder)
MODEL_BUILDERS = {
    "splice": (SpliceGeneratorConfig, build_splice_generator),
    "splicenet": (SpliceNetConfig, build_splicenet),
}


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def model_kind(model: nn.Module) -> str:
    for kind, (config_cls, _) in MODEL_BUILDERS.items():
        if isinstance(getattr(model, "config", None), config_cls):
            return kind
    raise CheckpointVersionError(f"no checkpoint kind for {type(model).__name__}")


def config_to_dict(config) -> Dict[str, Any]:
    return dataclasses.asdict(config)


def config_from_dict(config_cls, values: Dict[str, Any]):
    """Rebuild a frozen config dataclass; lists written by asdict become tuples again"""
    names = {f.name for f in dataclasses.fields(config_cls)}
    unknown = set(values) - names
    if unknown:
        raise CheckpointVersionError(f"{config_cls.__name__} has no fields {sorted(unknown)}")
    return config_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})


def save_checkpoint(path, model: nn.Module, optimizer: torch.optim.Optimizer = None,
                    iteration: int = 0, extra: Dict[str, Any] = None) -> Path:
    """Write model (and optionally optimizer) state; returns the path written"""
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model_kind(model),
        "config": config_to_dict(model.config),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "iteration": int(iteration),
    }
    payload.update(extra or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as exc:
        raise SpliceIOError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("Saved %s checkpoint at iteration %d to %s", payload["kind"], iteration, path)
    return path


def read_checkpoint(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise SpliceIOError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise SpliceIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointVersionError(f"{path} is not a generator checkpoint")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has checkpoint format {payload['format_version']}, "
            f"this version reads format {CHECKPOINT_FORMAT_VERSION}"
        )
    if payload.get("kind") not in MODEL_BUILDERS:
        raise CheckpointVersionError(f"{path} holds an unknown model kind {payload.get('kind')!r}")
    return payload


def load_checkpoint(path, expected_kind: str = None,
                    device: Optional[torch.device] = None) -> Tuple[nn.Module, Dict[str, Any]]:
    """
    Rebuild the model stored at path.

    Returns:
        Tuple of (model, raw checkpoint payload)
    """
    payload = read_checkpoint(path)
    kind = payload["kind"]
    if expected_kind and kind != expected_kind:
        raise CheckpointVersionError(f"{path} holds a {kind} model, expected {expected_kind}")

    config_cls, builder = MODEL_BUILDERS[kind]
    model = builder(config_from_dict(config_cls, payload["config"]))
    try:
        model.load_state_dict(payload["model_state"], strict=True)
    except RuntimeError as exc:
        raise CheckpointVersionError(f"parameters in {path} do not match its config: {exc}") from exc
    if device is not None:
        model.to(device)
    return model, payload
