"""Bounded per-image perturbations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion.images import ImageBatch
from ..numerics import Tensor


@dataclass
class Perturbation:
    """delta with ||delta||_inf <= eps_budget; defended image clamps to [-1, 1]."""

    delta: Tensor
    eps_budget: float

    def __post_init__(self):
        if not isinstance(self.delta, Tensor):
            self.delta = Tensor(self.delta)
        peak = float(np.abs(self.delta.data).max()) if self.delta.size else 0.0
        if peak > self.eps_budget + 1e-7:
            raise ValueError(f"perturbation exceeds budget: {peak:.6f} > {self.eps_budget:.6f}")

    def linf(self) -> float:
        return float(np.abs(self.delta.data).max())

    def materialize(self, x0) -> ImageBatch:
        imgs = x0.images if isinstance(x0, ImageBatch) else x0
        ids = x0.ids if isinstance(x0, ImageBatch) else [0] * imgs.shape[0]
        out = np.clip(imgs.data + self.delta.data, -1.0, 1.0).astype(np.float32)
        return ImageBatch(Tensor(out), ids)
