"""Surrogate adversarial score-distillation loss and its analytic oracles.

Conventions used throughout (B = batch size, J = d delta / d phi, r = residual
eps_theta - eps, M = d eps_theta / d x_t, alpha/w from the schedule at t):

- sur_adv_sds_term builds  mean_B || x_t_def - stopgrad(x_t_def + w r) ||^2,
  whose value is w^2 ||r||^2 and whose exact phi-gradient is -(2 a w / B) J^T r.
- advsds_grad_reference returns -(w / B) J^T r directly (no loss construction),
  so the surrogate gradient equals 2 alpha(t) times it.
- full_grad_reference returns the exact gradient of -(w / B) ||r||^2 through
  the frozen denoiser, -(2 a w / B) J^T M^T r, which descent-maximizes the
  diffusion loss; the Jacobian-path term it adds over the surrogate is
  -(2 a w / B) J^T (M^T - I) r.

Descending any of these bundles moves the defender adversarially; the
combined training objective simply adds the regression term (no sign flip).
"""

from __future__ import annotations

import numpy as np

from ..diffusion.denoiser import Denoiser
from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule
from ..imagewise.perturbation import Perturbation
from ..numerics import (
    GradBundle,
    NumericsError,
    Tensor,
    no_grad,
    stop_gradient,
    tabs,
    tsum,
    zero_grads,
)
from .net import DefenderNet


def _images(x) -> Tensor:
    return x.images if isinstance(x, ImageBatch) else x


def _coeffs(sched: NoiseSchedule, t: float) -> tuple:
    t = float(np.asarray(t).reshape(()))
    sched.check_t(t)
    return float(sched.alpha(t)), float(sched.sigma(t)), float(sched.weight(t)), t


def _assert_frozen(model: Denoiser, where: str) -> None:
    if any(p.requires_grad for p in model.params.values()):
        raise NumericsError(f"{where}: target denoiser must be frozen")


def defend(net: DefenderNet, x0) -> tuple:
    """(Perturbation, defended ImageBatch) — one forward pass, then clamp."""
    imgs = _images(x0)
    with no_grad():
        delta = net.forward(imgs)
    delta.check_finite("defender output")
    pert = Perturbation(delta, net.eps_budget)
    batch = x0 if isinstance(x0, ImageBatch) else ImageBatch(imgs, [0] * imgs.shape[0])
    return pert, pert.materialize(batch)


def sur_adv_sds_term(
    net: DefenderNet, model: Denoiser, x0, t: float, eps: Tensor, sched: NoiseSchedule
) -> Tensor:
    """Scalar graph for the stop-gradient surrogate at one fixed (t, eps)."""
    a, s, w, t = _coeffs(sched, t)
    x = _images(x0)
    b = x.shape[0]
    delta = net.forward(x)
    x_t_def = (x + delta) * a + eps * s
    pred = model.forward(x_t_def, t)  # null condition
    target = stop_gradient(x_t_def + (pred - eps) * w)
    return tsum((x_t_def - target) ** 2) * (1.0 / b)


def sur_adv_sds_loss(
    net: DefenderNet, model: Denoiser, x0, t: float, eps: Tensor, sched: NoiseSchedule
) -> tuple:
    """(loss value, gradient bundle w.r.t. phi); theta receives no gradient."""
    _assert_frozen(model, "sur_adv_sds_loss")
    zero_grads(net.params)
    term = sur_adv_sds_term(net, model, x0, t, eps, sched)
    term.backward()
    if any(p.grad is not None for p in model.params.values()):
        raise NumericsError("sur_adv_sds_loss: gradient leaked into the frozen denoiser")
    return term.item(), GradBundle.from_params(net.params)


def advsds_grad_reference(
    net: DefenderNet, model: Denoiser, x0, t: float, eps: Tensor, sched: NoiseSchedule
) -> GradBundle:
    """-(w/B) J^T r computed as a direct product, no stop-grad construction."""
    _assert_frozen(model, "advsds_grad_reference")
    a, s, w, t = _coeffs(sched, t)
    x = _images(x0)
    b = x.shape[0]
    with no_grad():
        delta_val = net.forward(x)
        x_t_def = (x + delta_val) * a + eps * s
        resid = model.forward(x_t_def, t).data - eps.data
    zero_grads(net.params)
    delta = net.forward(x)
    probe = tsum(delta * Tensor((-w / b) * resid))
    probe.backward()
    return GradBundle.from_params(net.params)


def denoiser_input_vjp(model: Denoiser, x_t: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
    """M^T v for the frozen denoiser at (x_t, t)."""
    leaf = Tensor(x_t, requires_grad=True)
    out = model.forward(leaf, float(t))
    out.backward(grad=cotangent.astype(out.dtype))
    return leaf.grad.copy()


def full_grad_reference(
    net: DefenderNet, model: Denoiser, x0, t: float, eps: Tensor, sched: NoiseSchedule
) -> tuple:
    """(objective value, exact gradient) of -(w/B)||r||^2 through the denoiser."""
    _assert_frozen(model, "full_grad_reference")
    a, s, w, t = _coeffs(sched, t)
    x = _images(x0)
    b = x.shape[0]
    zero_grads(net.params)
    delta = net.forward(x)
    x_t_def = (x + delta) * a + eps * s
    pred = model.forward(x_t_def, t)
    objective = tsum((pred - eps) ** 2) * (-w / b)
    objective.backward()
    return objective.item(), GradBundle.from_params(net.params)


def jacobian_term_reference(
    net: DefenderNet, model: Denoiser, x0, t: float, eps: Tensor, sched: NoiseSchedule
) -> GradBundle:
    """The exact piece the surrogate drops: -(2 a w / B) J^T (M^T - I) r."""
    _assert_frozen(model, "jacobian_term_reference")
    a, s, w, t = _coeffs(sched, t)
    x = _images(x0)
    b = x.shape[0]
    with no_grad():
        delta_val = net.forward(x)
        x_t_def = ((x + delta_val) * a + eps * s).data
        resid = model.forward(Tensor(x_t_def), t).data - eps.data
    mtr = denoiser_input_vjp(model, x_t_def, t, resid)
    cot = (-2.0 * a * w / b) * (mtr - resid)
    zero_grads(net.params)
    delta = net.forward(x)
    probe = tsum(delta * Tensor(cot.astype(np.float32)))
    probe.backward()
    return GradBundle.from_params(net.params)


def reg_term(net: DefenderNet, x0, delta_iw, norm: str = "l1") -> Tensor:
    """Regression toward stored per-image perturbations; mean per-image norm."""
    x = _images(x0)
    b = x.shape[0]
    target = delta_iw.delta if isinstance(delta_iw, Perturbation) else delta_iw
    target = target if isinstance(target, Tensor) else Tensor(target)
    if target.shape != x.shape:
        raise ValueError(f"pair shape {target.shape} != image shape {x.shape}")
    diff = net.forward(x) - Tensor(target.data)
    if norm == "l1":
        return tsum(tabs(diff)) * (1.0 / b)
    if norm == "l2":
        return tsum(diff**2) * (1.0 / b)
    raise ValueError(f"unknown norm {norm!r}")


def reg_loss(net: DefenderNet, x0, delta_iw, norm: str = "l1") -> tuple:
    zero_grads(net.params)
    term = reg_term(net, x0, delta_iw, norm)
    term.backward()
    return term.item(), GradBundle.from_params(net.params)
