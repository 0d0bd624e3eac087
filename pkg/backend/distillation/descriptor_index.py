"""
Coarse self-similarity descriptors for an image collection and exact
nearest-neighbour search over them.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Union

import numpy as np
import torch
from sklearn.metrics.pairwise import cosine_similarity, euclidean_distances
from tqdm import tqdm

from extractor.features import DEFAULT_WINDOW, coarse_self_similarity, spatial_keys
from extractor.vit_backend import VitExtractor, forward_features
from training.augment import resize_square
from utils.errors import ConfigError, ImageReadError, SpliceIOError, UnknownImageError
from utils.image_io import file_sha256, load_image

logger = logging.getLogger(__name__)

METRICS = ("cosine", "frobenius")
DESCRIPTORS_FILE = "descriptors.npy"
IDS_FILE = "ids.txt"
META_FILE = "index.meta.json"

# rows compared per similarity block; knn and knn_table share it so results agree bit for bit
BLOCK_SIZE = 256

ImageSource = Union[str, Path, torch.Tensor]


@dataclass
class DescriptorIndex:
    """Flattened coarse descriptors, one row per image id (ids sorted)"""
    image_ids: List[str]
    descriptors: np.ndarray
    metric: str = "cosine"
    window: int = DEFAULT_WINDOW
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown descriptor metric {self.metric!r}; choose from {METRICS}")
        if len(self.image_ids) != len(self.descriptors):
            raise ConfigError(f"{len(self.image_ids)} ids for {len(self.descriptors)} descriptors")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ConfigError("image ids must be unique")
        self._positions = {image_id: i for i, image_id in enumerate(self.image_ids)}

    def __len__(self) -> int:
        return len(self.image_ids)

    def position(self, image_id: str) -> int:
        if image_id not in self._positions:
            raise UnknownImageError(f"image id {image_id!r} is not in the index")
        return self._positions[image_id]

    def block_similarity(self, start: int, stop: int) -> np.ndarray:
        """Similarity of rows start:stop against every row (larger is more similar)"""
        rows = self.descriptors[start:stop]
        if self.metric == "cosine":
            return cosine_similarity(rows, self.descriptors)
        # Frobenius distance between the descriptor matrices, negated
        return -euclidean_distances(rows, self.descriptors)

    def similarity_row(self, position: int) -> np.ndarray:
        start = position - position % BLOCK_SIZE
        return self.block_similarity(start, min(start + BLOCK_SIZE, len(self)))[position - start]

    def save(self, directory) -> Path:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            np.save(directory / DESCRIPTORS_FILE, self.descriptors)
            (directory / IDS_FILE).write_text("".join(f"{i}\n" for i in self.image_ids))
            meta = {"metric": self.metric, "window": self.window, "provenance": self.provenance}
            (directory / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise SpliceIOError(f"cannot write descriptor index to {directory}: {exc}") from exc
        return directory

    @classmethod
    def load(cls, directory) -> "DescriptorIndex":
        directory = Path(directory)
        try:
            descriptors = np.load(directory / DESCRIPTORS_FILE)
            image_ids = (directory / IDS_FILE).read_text().splitlines()
            meta = json.loads((directory / META_FILE).read_text())
        except (OSError, ValueError) as exc:
            raise SpliceIOError(f"cannot read descriptor index from {directory}: {exc}") from exc
        return cls(image_ids=image_ids, descriptors=descriptors, metric=meta["metric"],
                   window=meta["window"], provenance=meta.get("provenance", {}))


def _content_hash(source: ImageSource) -> str:
    if isinstance(source, torch.Tensor):
        return hashlib.sha256(source.detach().cpu().float().contiguous().numpy().tobytes()).hexdigest()
    return file_sha256(source)


def dataset_hash(content_hashes: Mapping[str, str]) -> str:
    digest = hashlib.sha256()
    for image_id in sorted(content_hashes):
        digest.update(f"{image_id}:{content_hashes[image_id]}\n".encode())
    return digest.hexdigest()


@torch.no_grad()
def describe_image(extractor: VitExtractor, image: torch.Tensor, window: int = DEFAULT_WINDOW,
                   vit_resize: int = 224) -> np.ndarray:
    """Flattened coarse self-similarity of the deepest-layer spatial keys"""
    device = extractor.mean.device
    square = resize_square(image.to(device), vit_resize)
    layer = extractor.deepest_layer
    features = forward_features(extractor, square, [layer])
    keys = spatial_keys(features, layer)
    descriptor = coarse_self_similarity(keys, window, features.grid_shape)
    return descriptor.flatten().cpu().numpy().astype(np.float32)


def compute_descriptors(images: Mapping[str, ImageSource], extractor: VitExtractor,
                        window: int = DEFAULT_WINDOW, vit_resize: int = 224, metric: str = "cosine",
                        progress: bool = False) -> DescriptorIndex:
    """
    Describe every image of a collection.

    Args:
        images: image id -> file path or (3, H, W) tensor
        extractor: frozen ViT
        window: pooling window of the coarse descriptor
        vit_resize: square side images are resized to before extraction
        metric: "cosine" or "frobenius"

    Returns:
        DescriptorIndex over the readable images; unreadable ones are skipped
        and listed in the provenance
    """
    ids, rows, skipped, hashes = [], [], [], {}
    for image_id in tqdm(sorted(images), desc="descriptors", disable=not progress):
        source = images[image_id]
        try:
            image = source if isinstance(source, torch.Tensor) else load_image(source)
            hashes[image_id] = _content_hash(source)
        except ImageReadError as exc:
            logger.warning("Skipping %s: %s", image_id, exc)
            skipped.append(image_id)
            continue
        ids.append(image_id)
        rows.append(describe_image(extractor, image, window, vit_resize))

    descriptors = np.stack(rows) if rows else np.zeros((0, 0), dtype=np.float32)
    provenance = {
        "dataset_hash": dataset_hash(hashes),
        "skipped": skipped,
        "vit_resize": vit_resize,
        "weights_source": extractor.config.weights_source,
    }
    logger.info("Described %d images (%d skipped), descriptor length %d",
                len(ids), len(skipped), descriptors.shape[1] if rows else 0)
    return DescriptorIndex(image_ids=ids, descriptors=descriptors, metric=metric,
                           window=window, provenance=provenance)


def _check_k(index: DescriptorIndex, k: int):
    if k < 1 or k >= len(index):
        raise ConfigError(f"K must satisfy 1 <= K < {len(index)} (collection size), got {k}")


def _rank(similarities: np.ndarray, position: int, k: int) -> np.ndarray:
    # descending similarity, ties by ascending position (ids are sorted)
    order = np.lexsort((np.arange(len(similarities)), -similarities))
    return order[order != position][:k]


def knn(index: DescriptorIndex, query_id: str, k: int) -> List[str]:
    """The k most similar other images, most similar first"""
    _check_k(index, k)
    position = index.position(query_id)
    return [index.image_ids[p] for p in _rank(index.similarity_row(position), position, k)]


def knn_table(index: DescriptorIndex, k: int) -> np.ndarray:
    """(N, k) neighbour positions for every image"""
    _check_k(index, k)
    table = np.empty((len(index), k), dtype=np.int64)
    for start in range(0, len(index), BLOCK_SIZE):
        stop = min(start + BLOCK_SIZE, len(index))
        block = index.block_similarity(start, stop)
        for offset, row in enumerate(block):
            table[start + offset] = _rank(row, start + offset, k)
    return table
