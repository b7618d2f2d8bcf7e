"""Fine-tuning a pretrained denoiser on a dozen portraits of one identity.

Both modes condition through a learned token (initialized from the null
embedding) rather than a cond-table row, so a fresh identity needs no table
slot. `full` updates every base weight plus the token; `lora_ti` keeps the
base frozen and trains adapters plus the token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion.denoiser import Denoiser
from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule, cosine_schedule
from ..diffusion.training import diffusion_loss
from ..numerics import AdamState, Rng, Tensor, adam_step
from .lora import AdapterSet


class PersonalizeDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PersonalizeConfig:
    mode: str = "lora_ti"  # or "full"
    steps: int = 400
    lr: float | None = None  # default depends on mode
    rank: int = 4
    scale: float = 1.0
    seed: int = 0
    images_per_identity: int = 12
    batch: int = 6

    def __post_init__(self):
        if self.mode not in ("full", "lora_ti"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.images_per_identity < 1:
            raise ValueError("images_per_identity must be >= 1")

    @property
    def effective_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-3 if self.mode == "lora_ti" else 1e-4


@dataclass
class LearnedToken:
    vec: Tensor

    @staticmethod
    def fresh(base: Denoiser) -> "LearnedToken":
        return LearnedToken(Tensor(base.params["cond.table"].data[0].copy(), requires_grad=True))


def _refs(refs: ImageBatch, cfg: PersonalizeConfig) -> ImageBatch:
    n = min(cfg.images_per_identity, len(refs))
    return refs.subset(np.arange(n))


def _run(model, refs, cfg, trainable, token, adapters, sched) -> None:
    rng = Rng(cfg.seed, 17)
    brng = rng.substream("batches")
    drng = rng.substream("draws")
    opt = AdamState(lr=cfg.effective_lr)
    n = len(refs)
    bsz = min(cfg.batch, n)
    for step in range(cfg.steps):
        xb = refs.subset(brng.integers(0, n, bsz))
        loss, grads = diffusion_loss(
            model, xb, drng, sched, token=token.vec, adapters=adapters, trainable=trainable
        )
        if not np.isfinite(loss):
            raise PersonalizeDiverged(f"loss {loss} at step {step}")
        adam_step(trainable, grads, opt)


def finetune_full(
    base: Denoiser, refs: ImageBatch, cfg: PersonalizeConfig, sched: NoiseSchedule | None = None
) -> tuple:
    """(personalized Denoiser, LearnedToken); base is copied, never touched."""
    if cfg.mode != "full":
        raise ValueError("cfg.mode must be 'full'")
    sched = sched or cosine_schedule()
    model = base.copy(trainable=True)
    token = LearnedToken.fresh(base)
    trainable = dict(model.params)
    trainable["token.vec"] = token.vec
    _run(model, _refs(refs, cfg), cfg, trainable, token, None, sched)
    return model.set_trainable(False), token


def finetune_lora_ti(
    base: Denoiser, refs: ImageBatch, cfg: PersonalizeConfig, sched: NoiseSchedule | None = None
) -> tuple:
    """(AdapterSet, LearnedToken) trained against the frozen base."""
    if cfg.mode != "lora_ti":
        raise ValueError("cfg.mode must be 'lora_ti'")
    sched = sched or cosine_schedule()
    fp = base.fingerprint()
    base.set_trainable(False)
    adapters = AdapterSet.build(base, cfg.rank, cfg.scale, seed=cfg.seed)
    token = LearnedToken.fresh(base)
    trainable = adapters.param_dict()
    trainable["token.vec"] = token.vec
    _run(base, _refs(refs, cfg), cfg, trainable, token, adapters, sched)
    if base.fingerprint() != fp:
        raise PersonalizeDiverged("base weights changed during adapter training")
    return adapters, token
