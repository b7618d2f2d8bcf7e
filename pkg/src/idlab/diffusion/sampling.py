"""Deterministic reverse-process sampling (ODE-style, no fresh noise per step)."""

from __future__ import annotations

import numpy as np

from ..numerics import NumericsError, Rng, Tensor, gaussian, no_grad
from .denoiser import Denoiser
from .images import ImageBatch
from .schedule import NoiseSchedule
from .training import cond_of


def sample(
    model: Denoiser,
    sched: NoiseSchedule,
    rng: Rng,
    n: int,
    steps: int,
    cond_id: int | None = None,
    token: Tensor | None = None,
    adapters=None,
    res: int = 32,
) -> ImageBatch:
    """Draw n images by denoising pure noise from t_max down to t_min.

    Randomness enters only through the initial noise; given the rng state the
    trajectory is fully deterministic. The predicted clean image is clamped to
    [-1, 1] at every step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cids = None if cond_id is None else cond_of(np.full(n, cond_id))
    grid = np.linspace(sched.t_max, sched.t_min, steps + 1)[:-1]
    with no_grad():
        x = gaussian(rng, (n, 1, res, res)).data.astype(np.float32)
        for k, t in enumerate(grid):
            pred = model.forward(Tensor(x), float(t), cond_ids=cids, token=token, adapters=adapters).data
            if not np.isfinite(pred).all():
                raise NumericsError(f"non-finite denoiser output at t={t:.4f}")
            a, s = float(sched.alpha(t)), float(sched.sigma(t))
            x0_hat = np.clip((x - s * pred) / a, -1.0, 1.0)
            if k == len(grid) - 1:
                x = x0_hat
            else:
                t2 = grid[k + 1]
                x = sched.alpha(t2).astype(np.float32) * x0_hat + sched.sigma(t2).astype(
                    np.float32
                ) * pred
    label = cond_id if cond_id is not None else -1
    return ImageBatch(Tensor(x.astype(np.float32)), [label] * n)
