"""
Dataset-scale training of the token-conditioned generator on distilled pairs.
"""

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Tuple

import torch
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from distillation.pairing import PairSet
from extractor.vit_backend import VitExtractor, get_extractor
from generators.checkpoints import save_checkpoint
from generators.splicenet import SpliceNet, splicenet_forward
from training.augment import augment_pair, chance, random_square_crop, resize_square
from training.config import TrainConfig
from training.feature_pipeline import FeaturePipeline, check_finite
from training.history import LossHistory
from training.losses import appearance_loss, combine, perceptual_distance, structure_loss
from training.splice import make_optimizer
from utils.errors import ConfigError
from utils.image_io import ImageStore

logger = logging.getLogger(__name__)

# step seeds are derived as seed * STEP_STRIDE + step
STEP_STRIDE = 1_000_003


class PairStepDataset(Dataset):
    """
    Item `step` is the augmented (structure, appearance) pair used at that
    training step, drawn from a generator seeded by (seed, step), so workers
    and resumed runs see the same stream.
    """

    def __init__(self, pairs: List[Tuple[str, str]], store: ImageStore, config: TrainConfig):
        if not pairs:
            raise ConfigError("the pair set is empty")
        self.pairs = pairs
        self.store = store
        self.config = config

    def __len__(self) -> int:
        return self.config.iterations

    def __getitem__(self, step: int) -> Dict[str, Any]:
        rng = torch.Generator().manual_seed(self.config.seed * STEP_STRIDE + step)
        index = int(torch.randint(0, len(self.pairs), (1,), generator=rng))
        structure_id, appearance_id = self.pairs[index]
        identity = chance(self.config.identity_pair_p, rng)
        policy = self.config.augment

        if identity:
            image = random_square_crop(self.store.load(structure_id), policy.crop_range, rng)
            structure = appearance = image
        else:
            structure, appearance = augment_pair(
                self.store.load(structure_id), self.store.load(appearance_id), policy, rng
            )
        size = self.config.vit_resize
        return {
            "step": step,
            "structure": resize_square(structure, size),
            "appearance": resize_square(appearance, size),
            "identity": identity,
        }


def train_splicenet(pairs: PairSet, model: SpliceNet, config: TrainConfig, store: ImageStore,
                    extractor: VitExtractor = None, checkpoint_dir=None,
                    resume: Dict[str, Any] = None, device: torch.device = None,
                    progress: bool = True) -> Tuple[SpliceNet, LossHistory]:
    """
    Train model on the pairs of a PairSet (both orders of every pair).

    Args:
        pairs: distilled pairs; ids are file names inside store
        model: SpliceNet to train in place
        config: training configuration (see training.config.SPLICENET_PRESET)
        store: image store resolving pair ids
        extractor: frozen ViT; loaded from config.vit when omitted
        checkpoint_dir: where periodic and final checkpoints are written
        resume: checkpoint payload to continue from (optimizer and iteration)

    Returns:
        Tuple of (model, loss history of the steps run here)
    """
    if len(pairs) == 0:
        raise ConfigError("the pair set is empty")
    device = torch.device(device or "cpu")
    extractor = extractor or get_extractor(config.vit, device)
    model.to(device).train()
    pipeline = FeaturePipeline(extractor, config.vit_resize)

    optimizer = make_optimizer(model, config)
    start = 0
    if resume:
        if resume.get("optimizer_state"):
            optimizer.load_state_dict(resume["optimizer_state"])
        start = int(resume.get("iteration", 0))
        logger.info("Resuming at iteration %d", start)
    if start >= config.iterations:
        logger.warning("Checkpoint is already at iteration %d of %d", start, config.iterations)

    dataset = PairStepDataset(pairs.training_pairs(), store, config)
    loader = DataLoader(dataset, batch_size=None, sampler=range(start, config.iterations),
                        num_workers=config.num_workers)
    history = LossHistory()
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None

    for item in tqdm(loader, desc="splicenet", total=config.iterations - start, disable=not progress):
        iteration = item["step"] + 1
        structure = item["structure"].to(device)
        appearance = item["appearance"].to(device)
        identity = bool(item["identity"])

        with torch.no_grad():
            source = pipeline.describe(structure)
            target = pipeline.describe(appearance)
        output = splicenet_forward(model, structure, target.cls)
        described = pipeline.describe(output)

        identity_term = (perceptual_distance(appearance, output, config.perceptual)
                         if identity else torch.zeros((), device=device))
        report = combine(
            appearance_loss(described.cls, target.cls),
            structure_loss(described.selfsim, source.selfsim),
            identity_term,
            config.weights,
        )
        check_finite(report, iteration)

        optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        optimizer.step()
        history.append(iteration, report)

        if iteration % config.log_every == 0:
            row = history.entries[-1][1]
            logger.info("iter %d: total %.4f app %.4f structure %.4f identity %.4f",
                        iteration, row.total, row.app, row.structure, row.identity)
        if checkpoint_dir and config.checkpoint_every and iteration % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_dir / f"splicenet_{iteration:06d}.pt", model, optimizer, iteration,
                            extra={"vit_config": asdict(config.vit)})

    if checkpoint_dir:
        final = max(start, config.iterations)
        save_checkpoint(checkpoint_dir / "splicenet_final.pt", model, optimizer, final,
                        extra={"vit_config": asdict(config.vit)})
    return model, history
