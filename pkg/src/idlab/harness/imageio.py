"""ImageBatch <-> checkpoint-file round trip for CLI hand-offs."""

from __future__ import annotations

import numpy as np

from ..diffusion.images import ImageBatch
from ..numerics.engine import Tensor
from .checkpoint import load_checkpoint, save_checkpoint


def save_images(path, batch: ImageBatch) -> None:
    save_checkpoint(
        {"images": batch.images.data, "ids": np.asarray(batch.ids, np.float32)}, path
    )


def load_images(path) -> ImageBatch:
    entries = load_checkpoint(path)
    ids = [int(v) for v in entries["ids"]]
    return ImageBatch(Tensor(entries["images"]), ids)
