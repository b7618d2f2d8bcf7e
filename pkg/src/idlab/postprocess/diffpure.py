"""Purification: noise an image to t*, then deterministically denoise back."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion.denoiser import Denoiser
from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule, cosine_schedule
from ..numerics import NumericsError, Rng, Tensor, no_grad


@dataclass(frozen=True)
class DiffpureConfig:
    purifier: Denoiser
    t_star: float = 0.3
    steps: int = 15


def diffpure(image, cfg: DiffpureConfig, rng: Rng, sched: NoiseSchedule | None = None):
    """x -> denoise(alpha(t*) x + sigma(t*) eps) from t* down to t_min; clamp.

    The purifier runs under the null condition; randomness enters only
    through the single forward noising draw.
    """
    sched = sched or cosine_schedule()
    sched.check_t(cfg.t_star)
    batch = isinstance(image, ImageBatch)
    x = image.images.data if batch else np.asarray(image, np.float32)
    eps = rng.normal(x.shape)
    grid = np.linspace(cfg.t_star, sched.t_min, cfg.steps + 1)[:-1]
    with no_grad():
        cur = (sched.alpha(cfg.t_star) * x + sched.sigma(cfg.t_star) * eps).astype(np.float32)
        for k, t in enumerate(grid):
            pred = cfg.purifier.forward(Tensor(cur), float(t)).data
            if not np.isfinite(pred).all():
                raise NumericsError(f"non-finite purifier output at t={t:.4f}")
            a, s = float(sched.alpha(t)), float(sched.sigma(t))
            x0_hat = np.clip((cur - s * pred) / a, -1.0, 1.0)
            if k == len(grid) - 1:
                cur = x0_hat
            else:
                t2 = grid[k + 1]
                cur = (sched.alpha(t2) * x0_hat + sched.sigma(t2) * pred).astype(np.float32)
    out = np.clip(cur, -1.0, 1.0).astype(np.float32)
    if batch:
        return ImageBatch(out, list(image.ids))
    return out
