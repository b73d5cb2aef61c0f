"""Dataset ingestion, random crop sampling, and numpy/torch marshalling."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch

from jndlab import imaging
from jndlab.errors import ImageLoadError, IngestionError

IMAGE_SUFFIXES = {".png", ".bmp"}


@dataclasses.dataclass
class ImageCollection:
    names: list
    images: list  # H x W x 3 float32 arrays in [0,1]
    skipped_small: int
    diagnostics: list  # per-file failure messages

    def __len__(self):
        return len(self.images)


def ingest(dataset_dir, crop_size) -> ImageCollection:
    """Load every decodable PNG/BMP in `dataset_dir` (lexicographic order),
    skipping images smaller than `crop_size` with a warning count.

    Grayscale files are replicated to three channels. Raises IngestionError
    when no usable image remains.
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise IngestionError(f"{root} is not a directory")
    names, images, diagnostics = [], [], []
    skipped_small = 0
    for path in sorted(root.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES or not path.is_file():
            continue
        try:
            img = imaging.load_image(path, grayscale="replicate")
        except (ImageLoadError, ValueError) as exc:
            diagnostics.append(str(exc))
            continue
        if img.shape[0] < crop_size or img.shape[1] < crop_size:
            skipped_small += 1
            diagnostics.append(
                f"{path}: {img.shape[1]}x{img.shape[0]} smaller than crop {crop_size}, skipped"
            )
            continue
        names.append(path.name)
        images.append(img)
    if not images:
        raise IngestionError(
            f"{root}: no usable images of size >= {crop_size} "
            f"({len(diagnostics)} files rejected)"
        )
    return ImageCollection(names, images, skipped_small, diagnostics)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator so experiments are bit-reproducible per seed."""
    return np.random.Generator(np.random.Philox(seed))


def sample_crops(collection, crop, batch, rng):
    """Uniformly random crop positions over uniformly random images.

    Returns (batch, crop, crop, 3) float32 plus the (image_index, top, left)
    position of each crop.
    """
    out = np.empty((batch, crop, crop, 3), dtype=np.float32)
    positions = []
    for i in range(batch):
        idx = int(rng.integers(len(collection.images)))
        img = collection.images[idx]
        top = int(rng.integers(img.shape[0] - crop + 1))
        left = int(rng.integers(img.shape[1] - crop + 1))
        out[i] = img[top : top + crop, left : left + crop]
        positions.append((idx, top, left))
    return out, positions


def center_crop(img, crop):
    top = (img.shape[0] - crop) // 2
    left = (img.shape[1] - crop) // 2
    return img[top : top + crop, left : left + crop]


def to_batch(images) -> torch.Tensor:
    """(B, H, W, 3) float array -> (B, 3, H, W) float32 tensor."""
    arr = np.ascontiguousarray(np.asarray(images, dtype=np.float32))
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def from_batch(t) -> np.ndarray:
    """(B, 3, H, W) tensor -> (B, H, W, 3) float32 array."""
    return t.detach().permute(0, 2, 3, 1).contiguous().cpu().numpy()


def image_to_tensor(img) -> torch.Tensor:
    """Single H x W x 3 image -> (1, 3, H, W) tensor."""
    return to_batch(np.asarray(img)[None])


def tensor_to_image(t) -> np.ndarray:
    """(1, 3, H, W) tensor -> H x W x 3 float32 image."""
    return from_batch(t)[0]
