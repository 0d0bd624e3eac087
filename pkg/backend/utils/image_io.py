"""
Image file I/O. Images are (3, H, W) float tensors in [0, 1].
PNG and JPEG are read; everything is written as PNG.
"""

import hashlib
import logging
from pathlib import Path
from typing import List, Union

import torch
import torchvision.transforms.functional as TF
from PIL import Image, UnidentifiedImageError
from torchvision.utils import save_image as _tv_save_image

from utils.errors import ImageReadError, SpliceIOError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

PathLike = Union[str, Path]


def load_image(path: PathLike, max_side: int = None) -> torch.Tensor:
    """Read an RGB image; optionally downscale so the longer side is at most max_side"""
    path = Path(path)
    if not path.is_file():
        raise ImageReadError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if max_side and max(img.size) > max_side:
                scale = max_side / max(img.size)
                new_size = (max(1, round(img.width * scale)), max(1, round(img.height * scale)))
                img = img.resize(new_size, Image.BICUBIC)
            tensor = TF.to_tensor(img)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc
    return tensor


def save_image(image: torch.Tensor, path: PathLike) -> Path:
    """Write a (3, H, W) or (1, 3, H, W) tensor as PNG"""
    path = Path(path).with_suffix(".png")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        _tv_save_image(image.detach().float().clamp(0, 1).cpu(), str(path))
    except OSError as exc:
        raise SpliceIOError(f"cannot write image {path}: {exc}") from exc
    return path


def list_images(directory: PathLike) -> List[Path]:
    """Image files of a directory in sorted (stable) order"""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageReadError(f"image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ImageStore:
    """Images of one directory addressed by file name, cached after the first read"""

    def __init__(self, root: PathLike, max_side: int = None):
        self.root = Path(root)
        self.max_side = max_side
        self._cache = {}

    def ids(self) -> List[str]:
        return [p.name for p in list_images(self.root)]

    def path(self, image_id: str) -> Path:
        return self.root / image_id

    def load(self, image_id: str) -> torch.Tensor:
        if image_id not in self._cache:
            self._cache[image_id] = load_image(self.path(image_id), self.max_side)
        return self._cache[image_id]
