"""First-order optimizers over named parameter dicts.

Parameters live in plain `dict[str, Tensor]` collections; gradients travel as
`GradBundle`s (name -> ndarray). Keeping updates keyed by name makes state
handling explicit and lets callers combine gradient sources before stepping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import NumericsError, Tensor


@dataclass
class GradBundle:
    """Named gradients, always dense (missing name == zeros is a caller bug)."""

    grads: dict  # name -> np.ndarray

    def __post_init__(self):
        self.grads = {k: np.asarray(v) for k, v in self.grads.items()}

    def scaled(self, c: float) -> "GradBundle":
        return GradBundle({k: c * v for k, v in self.grads.items()})

    def add(self, other: "GradBundle") -> "GradBundle":
        if set(self.grads) != set(other.grads):
            raise NumericsError("GradBundle.add: mismatched parameter names")
        return GradBundle({k: self.grads[k] + other.grads[k] for k in self.grads})

    def global_norm(self) -> float:
        total = 0.0
        for v in self.grads.values():
            total += float(np.sum(np.asarray(v, dtype=np.float64) ** 2))
        return float(np.sqrt(total))

    @staticmethod
    def from_params(params: dict) -> "GradBundle":
        """Collect .grad from tensors after backward(); zeros where untouched."""
        out = {}
        for name, p in params.items():
            out[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        return GradBundle(out)


def grads_from_backward(params: dict) -> GradBundle:
    return GradBundle.from_params(params)


@dataclass
class AdamState:
    """Adam moments; created lazily to match the parameter set on first step."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: GradBundle, state: AdamState) -> None:
    """One Adam update in place. Bias-corrected, float32 state throughout."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in sorted(params):
        p = params[name]
        if name not in grads.grads:
            raise NumericsError(f"adam_step: missing gradient for {name!r}")
        g = grads.grads[name]
        if g.shape != p.data.shape:
            raise NumericsError(
                f"adam_step: grad shape {g.shape} != param shape {p.data.shape} for {name!r}"
            )
        g = g.astype(p.data.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)


def sgd_step(params: dict, grads: GradBundle, lr: float) -> None:
    for name in sorted(params):
        p = params[name]
        g = grads.grads[name]
        if g.shape != p.data.shape:
            raise NumericsError(f"sgd_step: grad shape mismatch for {name!r}")
        p.data -= (lr * g).astype(p.data.dtype)


def clip_global_norm(grads: GradBundle, max_norm: float) -> GradBundle:
    norm = grads.global_norm()
    if norm <= max_norm or norm == 0.0:
        return grads
    return grads.scaled(max_norm / norm)
