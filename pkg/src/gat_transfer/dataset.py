"""Unpaired training/evaluation dataset over the preprocessed canvases."""

import logging
from typing import Optional

import numpy as np
import torch
from torch.utils.data import Dataset

from .data import (
    Augmentation,
    AugmentConfig,
    DatasetManifest,
    Domain,
    ImageSample,
    augment,
    choose_augmentation,
    image_key,
    load_image,
    normalize,
)
from .errors import DatasetError
from .landmarks import LandmarkCache, MaskBundle, MaskSource, build_mask_bundle

logger = logging.getLogger(__name__)


def unpaired_order(
    num_x: int, num_y: int, seed: int, epoch: int, batch_size: int = 1
) -> list[tuple[int, int]]:
    """Index pairs for one epoch with each domain shuffled independently.

    The epoch length is the larger domain (rounded down to whole batches), so
    only the larger domain is seen exactly once per epoch. The smaller domain
    repeats: it is drawn from back-to-back permutations, each of its images
    appearing once per pass and at most ceil(length / n) times per epoch.
    """
    if num_x == 0 or num_y == 0:
        raise DatasetError("Both domains need at least one training image")
    rng = np.random.default_rng([seed, epoch])
    length = max(num_x, num_y)
    length -= length % batch_size
    if length == 0:
        raise DatasetError(f"batch_size {batch_size} exceeds the number of training images")

    def stream(n: int) -> np.ndarray:
        passes = -(-length // n)
        return np.concatenate([rng.permutation(n) for _ in range(passes)])[:length]

    order_x = stream(num_x)
    order_y = stream(num_y)
    return [(int(i), int(j)) for i, j in zip(order_x, order_y)]


class UnpairedDataset(Dataset):
    """Yields (x, y) pairs with their landmark masks.

    Augmentation is only applied when ``augment_cfg`` is given, which the
    training split does and the test split never does.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        cache: LandmarkCache,
        split: str = "train",
        augment_cfg: Optional[AugmentConfig] = None,
        seed: int = 0,
        batch_size: int = 1,
        dilation_px: int = 3,
    ):
        self.manifest = manifest
        self.cache = cache
        self.split = split
        self.augment_cfg = augment_cfg if split == "train" else None
        self.seed = seed
        self.batch_size = batch_size
        self.dilation_px = dilation_px
        self.size = manifest.image_size
        self.ids_x = manifest.ids(split, Domain.X_PHOTO)
        self.ids_y = manifest.ids(split, Domain.Y_PORTRAIT)
        if not self.ids_x or not self.ids_y:
            raise DatasetError(f"The {split} split is empty for at least one domain")
        self._masks: dict[str, MaskBundle] = {}
        self.epoch = 0
        self.pairs = unpaired_order(len(self.ids_x), len(self.ids_y), seed, 0, batch_size)

    def set_epoch(self, epoch: int):
        """Reshuffle both domains for ``epoch``."""
        self.epoch = epoch
        self.pairs = unpaired_order(len(self.ids_x), len(self.ids_y), self.seed, epoch, self.batch_size)

    def __len__(self) -> int:
        return len(self.pairs)

    def masks_for(self, key: str, source: MaskSource) -> MaskBundle:
        if key not in self._masks:
            landmarks = self.cache.get(key)
            self._masks[key] = build_mask_bundle(landmarks, source, self.dilation_px, self.size)
        return self._masks[key]

    def load_sample(self, domain: Domain, image_id: str) -> ImageSample:
        raw = load_image(self.manifest.processed_path(domain, self.split, image_id), domain)
        if raw.pixels.shape[:2] != (self.size, self.size):
            raise DatasetError(f"Processed image {raw.source_path} is not {self.size}×{self.size}")
        return normalize(raw, image_id)

    def _item(self, domain: Domain, image_id: str, index: int) -> dict:
        key = image_key(domain, self.split, image_id)
        source = MaskSource.CONTENT_X if domain == Domain.X_PHOTO else MaskSource.STYLE_Y
        sample = self.load_sample(domain, image_id)
        masks = self.masks_for(key, source)

        if self.augment_cfg is not None:
            rng = np.random.default_rng([self.seed, self.epoch, index, 0 if domain == Domain.X_PHOTO else 1])
            kind = choose_augmentation(rng, self.augment_cfg)
            sample = augment(sample, kind, rng, self.augment_cfg)
            if kind == Augmentation.HFLIP:
                masks = masks.mirrored()

        stacked = torch.from_numpy(masks.stacked())
        return {
            "image": torch.from_numpy(np.ascontiguousarray(sample.pixels.transpose(2, 0, 1))),
            "eye": stacked[0:1],
            "nose": stacked[1:2],
            "lip": stacked[2:3],
            "head": stacked[3:4],
            "has_face": self.cache.get(key) is not None,
            "id": key,
        }

    def __getitem__(self, index: int) -> dict:
        ix, iy = self.pairs[index]
        return {
            "x": self._item(Domain.X_PHOTO, self.ids_x[ix], index),
            "y": self._item(Domain.Y_PORTRAIT, self.ids_y[iy], index),
        }
