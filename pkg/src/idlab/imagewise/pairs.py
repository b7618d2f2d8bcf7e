"""Fixed (image, perturbation) regression pairs produced by the PGD defense."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..diffusion.images import ImageBatch
from ..harness.checkpoint import load_checkpoint, save_checkpoint
from ..numerics import Rng, Tensor
from .pgd import PgdConfig, pgd_defend

log = logging.getLogger(__name__)

_CHUNK = 24


@dataclass
class PairStore:
    """image index (into the source set) -> PGD delta, plus provenance."""

    eps_budget: float
    deltas: dict = field(default_factory=dict)  # int -> np.ndarray (1, H, W)
    failed: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.deltas)

    @property
    def indices(self) -> list:
        return sorted(self.deltas)

    def delta_for(self, idx: int) -> np.ndarray:
        if idx not in self.deltas:
            raise KeyError(f"no regression pair for image {idx}")
        return self.deltas[idx]

    def batch(self, source: ImageBatch, idx_list) -> tuple:
        """(images, stacked deltas) for the given pair indices."""
        imgs = source.subset(np.asarray(idx_list))
        d = np.stack([self.delta_for(int(i)) for i in idx_list])
        return imgs, Tensor(d)

    def save(self, path) -> None:
        entries = {f"delta/{i:06d}": d for i, d in self.deltas.items()}
        entries["meta/eps_budget"] = np.array([self.eps_budget], np.float32)
        entries["meta/failed"] = np.asarray(self.failed, np.float32)
        save_checkpoint(entries, path)

    @staticmethod
    def load(path) -> "PairStore":
        entries = load_checkpoint(path)
        store = PairStore(float(entries["meta/eps_budget"][0]))
        store.failed = [int(v) for v in entries["meta/failed"]]
        for name, arr in entries.items():
            if name.startswith("delta/"):
                store.deltas[int(name.split("/")[1])] = arr
        return store


def build_regression_pairs(
    images: ImageBatch,
    fraction: float,
    target,
    cfg: PgdConfig,
    rng: Rng,
) -> PairStore:
    """Run the PGD defense on a deterministic random subset of the corpus."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(images)
    k = max(1, int(round(fraction * n)))
    chosen = np.sort(rng.substream("pair-select").choice(n, k, replace=False))
    store = PairStore(cfg.eps_budget)
    for lo in range(0, k, _CHUNK):
        idx = chosen[lo : lo + _CHUNK]
        sub = images.subset(idx)
        try:
            pert = pgd_defend(sub, target, cfg, rng.substream(f"pair-pgd/{lo}"))
        except Exception:
            log.exception("pair build failed for chunk at %d", lo)
            store.failed.extend(int(i) for i in idx)
            continue
        for j, i in enumerate(idx):
            store.deltas[int(i)] = pert.delta.data[j].copy()
    return store
