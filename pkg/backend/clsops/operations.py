"""
[CLS]-token manipulation over a trained SpliceNet: appearance interpolation
and K-means appearance modes.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import torch
from sklearn.cluster import KMeans, kmeans_plusplus
from torchvision.utils import make_grid

from extractor.features import ClsToken, as_tensor
from generators.splicenet import SpliceNet, splicenet_forward
from utils.errors import ConfigError, ShapeError, SpliceIOError
from utils.image_io import save_image

logger = logging.getLogger(__name__)

MODES_FILE = "modes.npy"
MODES_META_FILE = "modes.json"

TokenLike = Union[ClsToken, torch.Tensor]


def interpolate_cls(cls_structure: TokenLike, cls_target: TokenLike, alphas: Sequence[float]) -> List[ClsToken]:
    """alpha * target + (1 - alpha) * structure for every alpha"""
    start, end = as_tensor(cls_structure), as_tensor(cls_target)
    if start.shape != end.shape:
        raise ShapeError(f"token shapes {tuple(start.shape)} and {tuple(end.shape)} differ")
    layer = cls_target.source_layer if isinstance(cls_target, ClsToken) else 0
    tokens = []
    for alpha in alphas:
        if not math.isfinite(alpha):
            raise ConfigError(f"interpolation weight {alpha} is not finite")
        tokens.append(ClsToken(vector=alpha * end + (1 - alpha) * start, source_layer=layer))
    return tokens


@torch.no_grad()
def render_interpolation(model: SpliceNet, structure: torch.Tensor, tokens: Sequence[TokenLike]) -> List[torch.Tensor]:
    model.eval()
    device = next(model.parameters()).device
    return [splicenet_forward(model, structure.to(device), as_tensor(t).to(device)).cpu() for t in tokens]


@dataclass
class ModeSet:
    centroids: np.ndarray
    assignments: Dict[str, int]
    inertia: float
    seed: int = 0
    inertia_trace: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def token(self, index: int) -> torch.Tensor:
        return torch.from_numpy(self.centroids[index]).float()

    def save(self, directory) -> Path:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            np.save(directory / MODES_FILE, self.centroids)
            meta = {
                "assignments": self.assignments,
                "inertia": self.inertia,
                "seed": self.seed,
                "inertia_trace": self.inertia_trace,
            }
            (directory / MODES_META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise SpliceIOError(f"cannot write modes to {directory}: {exc}") from exc
        return directory

    @classmethod
    def load(cls, directory) -> "ModeSet":
        directory = Path(directory)
        try:
            centroids = np.load(directory / MODES_FILE)
            meta = json.loads((directory / MODES_META_FILE).read_text())
        except (OSError, ValueError) as exc:
            raise SpliceIOError(f"cannot read modes from {directory}: {exc}") from exc
        return cls(centroids=centroids, assignments=meta["assignments"], inertia=meta["inertia"],
                   seed=meta["seed"], inertia_trace=meta.get("inertia_trace", []))


def kmeans_modes(tokens, k: int, seed: int = 0, image_ids: Sequence[str] = None,
                 max_iter: int = 300, tol: float = 1e-6) -> ModeSet:
    """
    K-means over N x D tokens: k-means++ seeding, then single Lloyd steps
    until no centroid moves more than tol (or max_iter steps).
    """
    if isinstance(tokens, torch.Tensor):
        tokens = tokens.detach().cpu().numpy()
    data = np.asarray(tokens, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"tokens must be an N x D matrix, got shape {data.shape}")
    count = len(data)
    if not 1 <= k <= count:
        raise ConfigError(f"K must satisfy 1 <= K <= N ({count}), got {k}")
    image_ids = list(image_ids) if image_ids is not None else [str(i) for i in range(count)]
    if len(image_ids) != count:
        raise ConfigError(f"{len(image_ids)} ids for {count} tokens")

    centers, _ = kmeans_plusplus(data, n_clusters=k, random_state=seed)
    trace = []
    for step in range(max_iter):
        fitted = KMeans(n_clusters=k, init=centers, n_init=1, max_iter=1, random_state=seed).fit(data)
        shift = float(np.max(np.linalg.norm(fitted.cluster_centers_ - centers, axis=1)))
        centers = fitted.cluster_centers_
        trace.append(float(fitted.inertia_))
        if shift < tol:
            break
    else:
        logger.warning("K-means stopped after %d steps without converging", max_iter)

    logger.info("K-means with K=%d: inertia %.4f after %d steps", k, trace[-1], len(trace))
    return ModeSet(
        centroids=centers,
        assignments={i: int(label) for i, label in zip(image_ids, fitted.labels_)},
        inertia=trace[-1],
        seed=seed,
        inertia_trace=trace,
    )


@torch.no_grad()
def render_mode_grid(model: SpliceNet, structures: Sequence[torch.Tensor], modes: ModeSet, path) -> Path:
    """One row per structure image: the structure, then its rendering under every mode"""
    model.eval()
    device = next(model.parameters()).device
    tiles = []
    for structure in structures:
        tiles.append(structure.cpu())
        for index in range(modes.k):
            tiles.append(splicenet_forward(model, structure.to(device), modes.token(index).to(device)).cpu())
    return save_image(make_grid(tiles, nrow=modes.k + 1, padding=2), path)
