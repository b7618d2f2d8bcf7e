"""Forward process, diffusion loss, and denoiser pre-training.

Identity labels map to cond-table rows as label+1; row 0 stays the null
condition. The loss follows the per-image convention: squared error summed
over pixels, averaged over batch and Monte-Carlo draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import (
    AdamState,
    GradBundle,
    NumericsError,
    Rng,
    Tensor,
    adam_step,
    gaussian,
    no_grad,
    tsum,
    zero_grads,
)
from .denoiser import Denoiser, DenoiserArch
from .images import ImageBatch
from .schedule import NoiseSchedule, cosine_schedule

NULL_COND = 0


def cond_of(ids) -> np.ndarray:
    """Dataset identity label -> cond-table row (0 is reserved for null)."""
    return np.asarray(ids, dtype=np.int64) + 1


def _images(x) -> Tensor:
    return x.images if isinstance(x, ImageBatch) else x


def _mc_term(model, x_in, t, eps, sched, cond_ids, token, adapters) -> Tensor:
    """Batch-mean of the per-image pixel-summed weighted squared error."""
    b = x_in.shape[0]
    x_t = forward_diffuse(x_in, t, eps, sched)
    pred = model.forward(x_t, t, cond_ids=cond_ids, token=token, adapters=adapters)
    w = Tensor(sched.weight(t).reshape(b, 1).astype(np.float32))
    per_image = tsum((pred - eps) ** 2, axis=(1, 2, 3)).reshape(b, 1) * w
    return tsum(per_image) * (1.0 / b)


def forward_diffuse(x0, t, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """x_t = alpha(t) x0 + sigma(t) eps; t scalar or per-sample vector."""
    x = _images(x0)
    t = sched.check_t(t)
    if eps.shape != x.shape:
        raise ValueError(f"eps shape {eps.shape} != image shape {x.shape}")
    a, s = sched.alpha(t), sched.sigma(t)
    if a.ndim == 1:  # per-sample scalings broadcast over (B,1,H,W)
        a = a.reshape(-1, 1, 1, 1)
        s = s.reshape(-1, 1, 1, 1)
    return x * Tensor(a.astype(np.float32)) + eps * Tensor(s.astype(np.float32))


def diffusion_loss(
    model: Denoiser,
    x0,
    rng: Rng,
    sched: NoiseSchedule,
    n_mc: int = 1,
    cond_ids=None,
    token: Tensor | None = None,
    adapters=None,
    trainable: dict | None = None,
    input_grad: bool = False,
):
    """Monte-Carlo E_{t,eps}[w(t) ||eps_theta(x_t,t) - eps||^2] with gradients.

    Returns (loss, grads): grads covers the `trainable` name -> Tensor dict
    and, when `input_grad`, the image leaf under key "__input__". One fresh
    (t, eps) pair is drawn per image per MC round.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    batch = x0 if isinstance(x0, ImageBatch) else None
    x_in = Tensor(_images(x0).data, requires_grad=input_grad)
    b = x_in.shape[0]
    if cond_ids is None and batch is not None and token is None:
        cond_ids = cond_of(batch.ids)

    total = None
    for _ in range(n_mc):
        t = sched.draw_t(rng, b)
        eps = gaussian(rng, x_in.shape)
        term = _mc_term(model, x_in, t, eps, sched, cond_ids, token, adapters) * (1.0 / n_mc)
        total = term if total is None else total + term

    loss = total.item()
    if not np.isfinite(loss):
        raise NumericsError("diffusion loss is non-finite")

    grads = GradBundle({})
    if trainable or input_grad:
        if trainable:
            zero_grads(trainable)
        x_in.grad = None
        total.backward()
        named = GradBundle.from_params(trainable or {})
        if input_grad:
            g = x_in.grad if x_in.grad is not None else np.zeros_like(x_in.data)
            named.grads["__input__"] = g.copy()
        grads = named
    return loss, grads


def diffusion_loss_value(model, x0, rng, sched, n_mc=1, cond_ids=None, token=None, adapters=None) -> float:
    with no_grad():
        loss, _ = diffusion_loss(
            model, x0, rng, sched, n_mc=n_mc, cond_ids=cond_ids, token=token, adapters=adapters
        )
    return loss


class PretrainDiverged(RuntimeError):
    pass


@dataclass
class PretrainConfig:
    steps: int = 3000
    batch: int = 8
    lr: float = 2e-4
    seed: int = 0
    width: int = 32
    emb_dim: int = 64
    num_ids: int = 64
    null_dropout: float = 0.1  # lets the model double as an unconditional purifier
    t_bias: float = 2.0  # training-time t density ~ u^(1/t_bias); >1 emphasizes high noise
    ema: float = 0.999  # 0 disables; returned weights are the EMA track
    lr_floor: float = 0.1  # cosine decay from lr down to lr * lr_floor
    log_every: int = 100


def pretrain(
    train: ImageBatch,
    cfg: PretrainConfig,
    holdout: ImageBatch | None = None,
    sched: NoiseSchedule | None = None,
):
    """Train a denoiser from scratch; returns (model, history).

    Post-condition checked by callers/tests: held-out diffusion loss after a
    full run is <= half the loss of the untrained initialization.
    """
    sched = sched or cosine_schedule()
    if len(train) == 0:
        raise ValueError("pretrain: empty dataset")
    rng = Rng(cfg.seed, 100)
    arch = DenoiserArch(width=cfg.width, emb_dim=cfg.emb_dim, num_ids=cfg.num_ids)
    model = Denoiser.build(arch, rng.substream("init"))
    batch_rng = rng.substream("batches")
    noise_rng = rng.substream("noise")
    drop_rng = rng.substream("null-drop")
    eval_rng_seed = rng.substream("eval")

    def held_loss(m) -> float:
        probe = holdout if holdout is not None else train
        r = Rng(eval_rng_seed.seed, eval_rng_seed.stream)  # same draws every eval
        return diffusion_loss_value(m, probe, r, sched, n_mc=4)

    history = {"step": [], "loss": [], "holdout_initial": held_loss(model)}
    opt = AdamState(lr=cfg.lr)
    ema = {k: v.data.copy() for k, v in model.params.items()} if cfg.ema > 0 else None
    n = len(train)
    for step in range(cfg.steps):
        idx = batch_rng.integers(0, n, cfg.batch)
        sub = train.subset(idx)
        cids = cond_of(sub.ids)
        drop = drop_rng.uniform((cfg.batch,)) < cfg.null_dropout
        cids[drop] = NULL_COND
        # biased t draw: high-noise steps carry the identity-conditional signal
        u = noise_rng.uniform((cfg.batch,)) ** (1.0 / cfg.t_bias)
        t = sched.t_min + (sched.t_max - sched.t_min) * u
        x_in = Tensor(sub.images.data)
        eps = gaussian(noise_rng, x_in.shape)
        zero_grads(model.params)
        total = _mc_term(model, x_in, t, eps, sched, cids, None, None)
        loss = total.item()
        if not np.isfinite(loss):
            raise PretrainDiverged(f"loss {loss} at step {step}")
        total.backward()
        frac = step / max(cfg.steps - 1, 1)
        opt.lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + np.cos(np.pi * frac)))
        adam_step(model.params, GradBundle.from_params(model.params), opt)
        if ema is not None:
            for k, v in model.params.items():
                ema[k] += (1.0 - cfg.ema) * (v.data - ema[k])
        if step % cfg.log_every == 0:
            history["step"].append(step)
            history["loss"].append(loss)
    if ema is not None:
        for k, v in model.params.items():
            v.data[...] = ema[k]
    history["holdout_final"] = held_loss(model)
    return model, history
