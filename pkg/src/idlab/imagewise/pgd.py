"""Optimization-based per-image defenses: sign-gradient PGD on the diffusion
loss, in plain (advdm-style) or surrogate-refreshing (antidb-style) mode, plus
discretized Gaussian baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..diffusion.denoiser import Denoiser
from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule, cosine_schedule
from ..diffusion.training import _mc_term, diffusion_loss
from ..numerics import AdamState, GradBundle, Rng, Tensor, adam_step, gaussian, zero_grads
from .perturbation import Perturbation

log = logging.getLogger(__name__)


@dataclass
class PgdConfig:
    """eps_budget and gamma are in the [-1, 1] pixel convention."""

    eps_budget: float = 16.0 / 255.0
    steps: int = 50
    mode: str = "advdm"  # advdm | antidb
    gamma: float | None = None  # defaults to eps_budget / 10
    surrogate_refresh_every: int = 10
    surrogate_ft_steps: int = 20
    surrogate_lr: float = 1e-4
    n_mc: int = 1

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = self.eps_budget / 10.0
        if not 0.0 < self.gamma <= self.eps_budget:
            raise ValueError("need 0 < gamma <= eps_budget")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in ("advdm", "antidb"):
            raise ValueError(f"unknown mode {self.mode!r}")


def _sign(g: np.ndarray) -> np.ndarray:
    # sign(0) = 0: zero-gradient coordinates stay put
    return np.sign(g)


def _input_grad(models, x_def: np.ndarray, rng: Rng, sched: NoiseSchedule, n_mc: int) -> tuple:
    """Mean diffusion loss over models and its gradient w.r.t. the image."""
    x_in = Tensor(x_def, requires_grad=True)
    b = x_in.shape[0]
    total = None
    for _ in range(n_mc):
        t = sched.draw_t(rng, b)
        eps = gaussian(rng, x_in.shape)
        for m in models:
            term = _mc_term(m, x_in, t, eps, sched, None, None, None)
            total = term if total is None else total + term
    total = total * (1.0 / (n_mc * len(models)))
    total.backward()
    return total.item(), x_in.grad


def pgd_defend(x0: ImageBatch, target, cfg: PgdConfig, rng: Rng, sched: NoiseSchedule | None = None) -> Perturbation:
    """delta <- clamp(delta + gamma sign(grad_delta L_Diff(theta, x0+delta)), -eps, eps).

    In antidb mode an internal surrogate copy of the target is fine-tuned on
    the current defended images every `surrogate_refresh_every` steps; the
    passed-in target is never mutated in either mode.
    """
    sched = sched or cosine_schedule()
    models = list(target) if isinstance(target, (list, tuple)) else [target]
    x = x0.images.data.astype(np.float32)
    delta = np.zeros_like(x)
    eps_b = float(cfg.eps_budget)

    surrogates = models
    opt = None
    if cfg.mode == "antidb":
        surrogates = [m.copy(trainable=True) for m in models]
        opt = [AdamState(lr=cfg.surrogate_lr) for _ in surrogates]

    grad_rng = rng.substream("pgd-noise")
    ft_rng = rng.substream("pgd-surrogate")
    for step in range(cfg.steps):
        if cfg.mode == "antidb" and step > 0 and step % cfg.surrogate_refresh_every == 0:
            defended = ImageBatch(Tensor(np.clip(x + delta, -1.0, 1.0)), x0.ids)
            for sur, st in zip(surrogates, opt):
                for _ in range(cfg.surrogate_ft_steps):
                    _, grads = diffusion_loss(
                        sur, defended, ft_rng, sched, n_mc=1, trainable=sur.params
                    )
                    adam_step(sur.params, grads, st)
        for sur in surrogates:
            zero_grads(sur.params)
        _, g = _input_grad(surrogates, x + delta, grad_rng, sched, cfg.n_mc)
        bad = ~np.isfinite(g).reshape(g.shape[0], -1).all(axis=1)
        if bad.any():
            log.warning("pgd_defend: non-finite gradient for %d image(s); freezing them", bad.sum())
            g = np.where(np.isfinite(g), g, 0.0)
            g[bad] = 0.0
        delta = np.clip(delta + cfg.gamma * _sign(g), -eps_b, eps_b).astype(np.float32)
    return Perturbation(Tensor(delta), eps_b)


def gaussian_baseline(x0: ImageBatch, eps_budget: float, size: str, rng: Rng) -> Perturbation:
    """Gaussian noise clamped to the budget and discretized to 1/127.5 steps.

    size='small' uses std = eps/3 (3-sigma fits the budget); 'large' uses
    std = eps (visible clipping mass at the bounds).
    """
    if size not in ("small", "large"):
        raise ValueError("size must be 'small' or 'large'")
    std = eps_budget / 3.0 if size == "small" else eps_budget
    draw = std * rng.normal(x0.images.shape, dtype=np.float64)
    clipped = np.clip(draw, -eps_budget, eps_budget)
    quantized = np.round(clipped * 127.5) / 127.5
    quantized = np.clip(quantized, -eps_budget, eps_budget)  # re-clip after rounding
    return Perturbation(Tensor(quantized.astype(np.float32)), eps_budget)
