"""Defender training loop: ensemble surrogate objective plus regression term."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule, cosine_schedule
from ..imagewise.pairs import PairStore
from ..numerics import AdamState, GradBundle, Rng, Tensor, adam_step, gaussian, no_grad, zero_grads
from .losses import reg_term, sur_adv_sds_term
from .net import DefenderArch, DefenderNet

log = logging.getLogger(__name__)

_PROBE_DRAWS = 4


@dataclass(frozen=True)
class RidTrainConfig:
    eps_budget: float = 16.0 / 255.0
    steps: int = 600
    batch: int = 8
    lr: float = 1e-4
    lambda_reg: float = 3.0
    sur_weight: float = 1.0  # 0 gives the regression-only ablation
    reg_norm: str = "l1"
    pair_batch: int = 8
    seed: int = 0
    log_every: int = 25
    arch: DefenderArch = field(default_factory=DefenderArch)


class RidDiverged(RuntimeError):
    pass


def _probe_draws(sched: NoiseSchedule, rng: Rng, shape) -> list:
    """Fixed (t, eps) pairs reused at every probe evaluation."""
    out = []
    for j in range(_PROBE_DRAWS):
        sub = rng.substream(f"draw/{j}")
        t = float(sched.draw_t(sub)[0])
        out.append((t, gaussian(sub, shape)))
    return out


def _probe_value(net, targets, images: Tensor, draws, sched) -> float:
    with no_grad():
        vals = []
        for t, eps in draws:
            term = sum(sur_adv_sds_term(net, m, images, t, eps, sched) for m in targets)
            vals.append(term.item() / len(targets))
    return float(np.mean(vals))


def train_rid(
    cfg: RidTrainConfig,
    images: ImageBatch,
    targets: list,
    pairs: PairStore | None = None,
    sched: NoiseSchedule | None = None,
    probe_images: Tensor | None = None,
) -> tuple:
    """Train a DefenderNet against frozen target denoisers.

    Minimizes mean_targets[sur term] + lambda * regression term with one
    backward per step; every target shares the step's (t, eps) draw. Returns
    (net, history). On a non-finite loss the last logged snapshot is restored
    and recorded in history["diverged_at"].
    """
    if not targets:
        raise ValueError("need at least one target denoiser")
    for m in targets:
        m.set_trainable(False)
    fps = [m.fingerprint() for m in targets]
    if pairs is not None and abs(pairs.eps_budget - cfg.eps_budget) > 1e-9:
        raise ValueError(
            f"pair store budget {pairs.eps_budget} != defender budget {cfg.eps_budget}"
        )
    sched = sched or cosine_schedule()
    root = Rng(cfg.seed, 3)
    net = DefenderNet.build(cfg.eps_budget, root.substream("init"), cfg.arch)
    opt = AdamState(lr=cfg.lr)
    brng = root.substream("batch")
    drng = root.substream("draw")
    prng = root.substream("pairs")
    shape = (cfg.batch,) + images.images.shape[1:]
    probe = None
    if probe_images is not None:
        probe = _probe_draws(sched, root.substream("probe"), probe_images.shape)

    n = len(images)
    use_reg = pairs is not None and cfg.lambda_reg > 0.0 and len(pairs) > 0
    history: dict = {"sur": [], "reg": [], "combined": [], "probe": [], "diverged_at": None}
    snap = {k: v.data.copy() for k, v in net.params.items()}

    for step in range(cfg.steps):
        idx = brng.integers(0, n, cfg.batch)
        xb = Tensor(images.images.data[idx])
        t = float(sched.draw_t(drng)[0])
        eps = gaussian(drng, shape)

        zero_grads(net.params)
        sur_val = 0.0
        combined = None
        if cfg.sur_weight > 0.0:
            ens_total = sum(sur_adv_sds_term(net, m, xb, t, eps, sched) for m in targets)
            ens_total = ens_total * (1.0 / len(targets))
            sur_val = ens_total.item()
            combined = ens_total if cfg.sur_weight == 1.0 else ens_total * cfg.sur_weight
        reg_val = 0.0
        if use_reg:
            pidx = [pairs.indices[i] for i in prng.integers(0, len(pairs), cfg.pair_batch)]
            pb, pd = pairs.batch(images, pidx)
            reg = reg_term(net, pb, pd, cfg.reg_norm)
            scaled = reg * cfg.lambda_reg
            combined = scaled if combined is None else combined + scaled
            reg_val = reg.item()
        if combined is None:
            raise ValueError("both loss terms disabled; nothing to train")

        val = combined.item()
        if not np.isfinite(val):
            log.error("rid training diverged at step %d; restoring last snapshot", step)
            for k, v in net.params.items():
                v.data[...] = snap[k]
            history["diverged_at"] = step
            break
        combined.backward()
        adam_step(net.params, GradBundle.from_params(net.params), opt)

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            history["sur"].append((step, sur_val))
            history["reg"].append((step, reg_val))
            history["combined"].append((step, val))
            if probe is not None:
                history["probe"].append(
                    (step, _probe_value(net, targets, probe_images, probe, sched))
                )
            snap = {k: v.data.copy() for k, v in net.params.items()}

    if [m.fingerprint() for m in targets] != fps:
        raise RidDiverged("target denoiser parameters changed during defender training")
    return net, history
