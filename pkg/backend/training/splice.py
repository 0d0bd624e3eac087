"""
Single-pair training: optimize a fresh generator on augmented views of one
structure/appearance pair.
"""

import logging
from typing import Tuple

import torch
from tqdm import tqdm

from extractor.vit_backend import VitExtractor, get_extractor
from generators.splice_unet import SpliceGeneratorConfig, SpliceUNet, build_splice_generator, frozen_batch_stats
from training.augment import augment_pair, smallest_crop_side
from training.config import TrainConfig
from training.feature_pipeline import FeaturePipeline, check_finite, mean_report
from training.history import LossHistory
from training.losses import LossReport, splice_objective

logger = logging.getLogger(__name__)


def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr, betas=(config.adam_beta1, config.adam_beta2))


def pair_losses(generator: SpliceUNet, pipeline: FeaturePipeline, structure: torch.Tensor,
                appearance: torch.Tensor, config: TrainConfig) -> LossReport:
    """Losses for one (structure, appearance) batch member"""
    with torch.no_grad():
        source = pipeline.describe(structure)
        target = pipeline.describe(appearance)

    output = pipeline.describe(generator(structure))
    keys_of_generated_target = pipeline.keys(generator(appearance))
    return splice_objective(
        output.cls, target.cls,
        output.selfsim, source.selfsim,
        target.keys, keys_of_generated_target,
        config.weights,
    )


def train_splice(structure: torch.Tensor, appearance: torch.Tensor, config: TrainConfig,
                 extractor: VitExtractor = None, generator: SpliceUNet = None,
                 device: torch.device = None, progress: bool = True) -> Tuple[SpliceUNet, LossHistory]:
    """
    Train a generator mapping structure to an image with appearance's look.

    Args:
        structure: (3, H, W) structure image in [0, 1]
        appearance: (3, H, W) appearance image in [0, 1]
        config: training configuration (see training.config.SPLICE_PRESET)
        extractor: frozen ViT; loaded from config.vit when omitted
        generator: optional pre-built generator
        device: compute device

    Returns:
        Tuple of (trained generator, loss history)
    """
    device = torch.device(device or "cpu")
    generator = generator or build_splice_generator(SpliceGeneratorConfig(), seed=config.seed)
    for name, image in (("structure", structure), ("appearance", appearance)):
        side = smallest_crop_side(*image.shape[-2:], config.augment.crop_range)
        generator.config.check_side(side, f"cropped {name}")
    extractor = extractor or get_extractor(config.vit, device)
    generator = generator.to(device)
    generator.train()
    structure, appearance = structure.to(device), appearance.to(device)

    pipeline = FeaturePipeline(extractor, config.vit_resize)
    optimizer = make_optimizer(generator, config)
    rng = torch.Generator().manual_seed(config.seed)
    history = LossHistory()

    steps = tqdm(range(1, config.iterations + 1), desc="splice", disable=not progress)
    for iteration in steps:
        members = [augment_pair(structure, appearance, config.augment, rng)]
        if config.clean_pair_interval and iteration % config.clean_pair_interval == 0:
            members.append((structure, appearance))

        report = mean_report([pair_losses(generator, pipeline, s, a, config) for s, a in members])
        check_finite(report, iteration)

        optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        optimizer.step()

        history.append(iteration, report)
        if iteration % config.log_every == 0 or iteration == 1:
            row = history.entries[-1][1]
            logger.info("iter %d: total %.4f app %.4f structure %.4f identity %.4f",
                        iteration, row.total, row.app, row.structure, row.identity)
            steps.set_postfix(total=f"{row.total:.4f}")

    return generator, history


@torch.no_grad()
def render_splice(generator: SpliceUNet, structure: torch.Tensor) -> torch.Tensor:
    """G(structure) at the structure's own resolution, with batch statistics as in training"""
    generator.train()
    device = next(generator.parameters()).device
    with frozen_batch_stats(generator):
        return generator(structure.to(device)).clamp(0, 1).cpu()
