"""Image batches in the [-1, 1] convention used everywhere in the lab."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Tensor


@dataclass
class ImageBatch:
    """(B, 1, H, W) images in [-1, 1] plus the identity index of each image."""

    images: Tensor
    ids: list

    def __post_init__(self):
        if not isinstance(self.images, Tensor):
            self.images = Tensor(self.images)
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise ValueError(f"ImageBatch expects (B, 1, H, W), got {self.images.shape}")
        self.ids = [int(i) for i in self.ids]
        if len(self.ids) != self.images.shape[0]:
            raise ValueError("ids length must match batch dimension")
        lo, hi = float(self.images.data.min()), float(self.images.data.max())
        if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
            raise ValueError(f"image values outside [-1, 1]: [{lo:.4f}, {hi:.4f}]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape

    def subset(self, idx) -> "ImageBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageBatch(Tensor(self.images.data[idx].copy()), [self.ids[i] for i in idx])

    def with_images(self, images) -> "ImageBatch":
        return ImageBatch(images if isinstance(images, Tensor) else Tensor(images), list(self.ids))

    @staticmethod
    def concat(batches: list) -> "ImageBatch":
        data = np.concatenate([b.images.data for b in batches], axis=0)
        ids = [i for b in batches for i in b.ids]
        return ImageBatch(Tensor(data), ids)
