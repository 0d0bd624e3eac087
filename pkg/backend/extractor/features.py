"""
Structure and appearance descriptors derived from ViT features: the [CLS]
token, the keys' cosine self-similarity, its spatially pooled variant and a
PCA rendering of the self-similarity.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.decomposition import PCA

from extractor.vit_backend import LayerFeatures
from utils.errors import DegenerateKeyError, GridError, RankError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 4


@dataclass
class ClsToken:
    vector: torch.Tensor
    source_layer: int

    @property
    def dim(self) -> int:
        return self.vector.shape[-1]


@dataclass
class SelfSimMatrix:
    """Cosine self-similarity of key rows ([CLS] first when present)"""
    matrix: torch.Tensor
    n: int


@dataclass
class CoarseDescriptor:
    matrix: torch.Tensor
    window: int
    d: int

    def flatten(self) -> torch.Tensor:
        return self.matrix.reshape(*self.matrix.shape[:-2], -1)


@dataclass
class PcaMaps:
    maps: torch.Tensor
    explained_variance_ratio: np.ndarray
    scores: np.ndarray
    components: np.ndarray


TensorLike = Union[torch.Tensor, ClsToken, SelfSimMatrix, CoarseDescriptor]


def as_tensor(value: TensorLike) -> torch.Tensor:
    """Unwrap a descriptor dataclass to its tensor"""
    if isinstance(value, ClsToken):
        return value.vector
    if isinstance(value, (SelfSimMatrix, CoarseDescriptor)):
        return value.matrix
    return value


def extract_cls(features: LayerFeatures, layer: int) -> ClsToken:
    """Row 0 of the tokens at layer"""
    return ClsToken(vector=features.tokens(layer)[..., 0, :], source_layer=layer)


def spatial_keys(features: LayerFeatures, layer: int) -> torch.Tensor:
    """Keys of layer without the [CLS] row"""
    return features.keys(layer)[..., 1:, :]


def self_similarity(keys: torch.Tensor) -> SelfSimMatrix:
    """
    Pairwise cosine similarity of the rows of keys, (m, d) or (B, m, d).

    Args:
        keys: key matrix; every row must have nonzero norm

    Returns:
        SelfSimMatrix with an (m, m) matrix (leading batch dimension kept)
    """
    if keys.dim() < 2:
        raise ShapeError(f"keys must be at least 2-D, got shape {tuple(keys.shape)}")
    norms = keys.norm(dim=-1, keepdim=True)
    zero = (norms.squeeze(-1) == 0).nonzero()
    if len(zero):
        row = tuple(zero[0].tolist())
        location = f"row {row[-1]}" if len(row) == 1 else f"row {row[-1]} of batch item {row[:-1]}"
        raise DegenerateKeyError(f"key {location} has zero norm; cosine similarity is undefined")

    unit = keys / norms
    matrix = (unit @ unit.transpose(-1, -2)).clamp(-1.0, 1.0)
    return SelfSimMatrix(matrix=matrix, n=keys.shape[-2] - 1)


def _square_side(count: int, grid_shape: Optional[Tuple[int, int]]) -> int:
    if grid_shape is not None:
        rows, cols = grid_shape
        if rows != cols or rows * cols != count:
            raise GridError(f"spatial keys form a {rows}x{cols} grid; a square grid is required")
        return rows
    side = math.isqrt(count)
    if side * side != count:
        raise GridError(f"{count} spatial keys do not form a square grid")
    return side


def coarse_self_similarity(keys: torch.Tensor, window: int = DEFAULT_WINDOW,
                           grid_shape: Tuple[int, int] = None) -> CoarseDescriptor:
    """
    Average-pool the square grid of spatial keys with a window x window kernel,
    then take the self-similarity of the pooled keys.
    """
    if window < 1:
        raise GridError(f"pooling window must be >= 1, got {window}")
    single = keys.dim() == 2
    batch = keys.unsqueeze(0) if single else keys
    count, dim = batch.shape[-2:]
    side = _square_side(count, grid_shape)
    if side % window:
        raise GridError(f"window {window} does not divide the {side}x{side} key grid")

    grid = batch.reshape(batch.shape[0], side, side, dim).permute(0, 3, 1, 2)
    pooled = F.avg_pool2d(grid, kernel_size=window, stride=window)
    d = side // window
    pooled = pooled.flatten(2).transpose(1, 2)  # (B, d*d, dim) in raster order

    matrix = self_similarity(pooled).matrix
    if single:
        matrix = matrix[0]
    return CoarseDescriptor(matrix=matrix, window=window, d=d)


def pca_visualize(selfsim: SelfSimMatrix, components: int = 3,
                  grid_shape: Tuple[int, int] = None) -> PcaMaps:
    """
    Leading principal components of the spatial self-similarity rows,
    as per-token maps on the patch grid, each min-max scaled to [0, 1].

    The [CLS] row and column are dropped when present, rows are centered and
    each component's sign is fixed so its largest-magnitude loading is positive.
    """
    matrix = as_tensor(selfsim).detach().to("cpu", torch.float64).numpy()
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"expected a square self-similarity matrix, got {matrix.shape}")
    n = selfsim.n if isinstance(selfsim, SelfSimMatrix) else matrix.shape[0]
    if matrix.shape[0] == n + 1:
        matrix = matrix[1:, 1:]

    centered = matrix - matrix.mean(axis=0, keepdims=True)
    rank = int(np.linalg.matrix_rank(centered))
    if components < 1 or components > rank:
        raise RankError(f"requested {components} components but the centered matrix has rank {rank}")

    pca = PCA(n_components=components, svd_solver="full")
    scores = pca.fit_transform(matrix)
    loadings = pca.components_.copy()
    for c in range(components):
        if loadings[c, np.argmax(np.abs(loadings[c]))] < 0:
            loadings[c] *= -1
            scores[:, c] *= -1

    low, high = scores.min(axis=0), scores.max(axis=0)
    span = np.where(high - low > 0, high - low, 1.0)
    normalized = (scores - low) / span

    rows, cols = grid_shape or (_square_side(matrix.shape[0], None),) * 2
    if rows * cols != matrix.shape[0]:
        raise GridError(f"grid {rows}x{cols} does not hold {matrix.shape[0]} tokens")
    maps = torch.from_numpy(normalized.T.reshape(components, rows, cols)).float()
    logger.debug("PCA explained variance: %s", pca.explained_variance_ratio_)
    return PcaMaps(maps=maps, explained_variance_ratio=pca.explained_variance_ratio_,
                   scores=scores, components=loadings)
