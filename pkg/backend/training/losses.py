"""
Appearance, structure and identity losses, the pluggable perceptual distance
and their weighted combination.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Union

import torch
import torch.nn.functional as F

from extractor.features import ClsToken, SelfSimMatrix, as_tensor
from training.config import LossWeights
from utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class LossReport:
    """Loss components; tensors while training, floats once detached"""
    total: Union[torch.Tensor, float]
    app: Union[torch.Tensor, float]
    structure: Union[torch.Tensor, float]
    identity: Union[torch.Tensor, float]

    def detached(self) -> "LossReport":
        return LossReport(*(
            v.detach().item() if isinstance(v, torch.Tensor) else float(v)
            for v in (self.total, self.app, self.structure, self.identity)
        ))

    def as_row(self, iteration: int) -> Dict[str, float]:
        report = self.detached()
        return {
            "iteration": iteration,
            "total": report.total,
            "app": report.app,
            "structure": report.structure,
            "identity": report.identity,
        }

    def terms(self) -> Dict[str, Union[torch.Tensor, float]]:
        return {"app": self.app, "structure": self.structure, "identity": self.identity, "total": self.total}


def _difference_norm(a, b, what: str) -> torch.Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    # vector_norm has a zero (not NaN) gradient at identical inputs
    return torch.linalg.vector_norm(a - b)


def appearance_loss(cls_out: Union[ClsToken, torch.Tensor], cls_target: Union[ClsToken, torch.Tensor]) -> torch.Tensor:
    """Euclidean distance between [CLS] tokens"""
    return _difference_norm(cls_out, cls_target, "appearance loss")


def structure_loss(sim_out: Union[SelfSimMatrix, torch.Tensor],
                   sim_source: Union[SelfSimMatrix, torch.Tensor]) -> torch.Tensor:
    """Frobenius distance between self-similarity matrices"""
    return _difference_norm(sim_out, sim_source, "structure loss (output and structure resolutions differ?)")


def identity_loss_keys(keys_target: torch.Tensor, keys_generated: torch.Tensor) -> torch.Tensor:
    """Frobenius distance between the target's keys and the keys of the generator applied to it"""
    return _difference_norm(keys_target, keys_generated, "identity loss")


def _mse_distance(image_a: torch.Tensor, image_b: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(image_b, image_a)


# Singleton so the learned metric is only loaded once
_lpips_model = None


def get_lpips_model():
    """Get or initialize the learned perceptual metric"""
    global _lpips_model
    if _lpips_model is None:
        import lpips
        _lpips_model = lpips.LPIPS(net="alex", verbose=False)
        _lpips_model.requires_grad_(False)
        _lpips_model.eval()
        logger.info("Loaded LPIPS (alex) perceptual metric")
    return _lpips_model


def _lpips_distance(image_a: torch.Tensor, image_b: torch.Tensor) -> torch.Tensor:
    model = get_lpips_model().to(image_b.device)
    batch_a = image_a.unsqueeze(0) if image_a.dim() == 3 else image_a
    batch_b = image_b.unsqueeze(0) if image_b.dim() == 3 else image_b
    # the metric expects inputs in [-1, 1]
    distance = model(batch_a * 2 - 1, batch_b * 2 - 1)
    return distance.mean()


PERCEPTUAL_BACKENDS: Dict[str, Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = {
    "mse": _mse_distance,
    "lpips": _lpips_distance,
}


def perceptual_distance(image_a: torch.Tensor, image_b: torch.Tensor, backend: str = "mse") -> torch.Tensor:
    """
    Distance between two images in [0, 1], differentiable w.r.t. image_b.

    Args:
        image_a: reference image, (3, H, W) or (B, 3, H, W)
        image_b: compared image, same shape
        backend: "mse" or "lpips"
    """
    if backend not in PERCEPTUAL_BACKENDS:
        raise ConfigError(f"unknown perceptual backend {backend!r}; choose from {sorted(PERCEPTUAL_BACKENDS)}")
    if image_a.shape != image_b.shape:
        raise ShapeError(f"perceptual distance: shapes {tuple(image_a.shape)} and {tuple(image_b.shape)} differ")
    return PERCEPTUAL_BACKENDS[backend](image_a, image_b)


def combine(app, structure, identity, weights: LossWeights) -> LossReport:
    total = app + weights.alpha * structure + weights.beta * identity
    return LossReport(total=total, app=app, structure=structure, identity=identity)


def splice_objective(cls_out, cls_target, sim_out, sim_source, keys_target, keys_of_generated_target,
                     weights: LossWeights) -> LossReport:
    """L_app + alpha * L_structure + beta * L_id"""
    return combine(
        appearance_loss(cls_out, cls_target),
        structure_loss(sim_out, sim_source),
        identity_loss_keys(keys_target, keys_of_generated_target),
        weights,
    )
