"""Finite-difference verification of reverse-mode gradients.

The checker promotes the probed tensor to float64 (numpy promotion then
carries f64 along the compute path), compares central differences against the
analytic gradient coordinate-by-coordinate, and reports the worst relative
error. Used by the test suite to certify every differentiable block.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor
from .rng import Rng


def grad_check(
    fn,
    wrt: Tensor,
    h: float = 1e-4,
    n_coords: int = 20,
    rng: Rng | None = None,
    rel_floor: float = 1e-6,
) -> float:
    """Max relative error |analytic - fd| / (|fd| + floor) over sampled coords.

    `fn()` must return a scalar Tensor built from `wrt` (closure style). The
    probe temporarily swaps `wrt.data` for a float64 copy so the finite
    differences are trustworthy at step `h`.
    """
    rng = rng or Rng(0, 0)
    orig = wrt.data
    wrt.data = orig.astype(np.float64)
    try:
        wrt.grad = None
        out = fn()
        if out.size != 1:
            raise ValueError("grad_check: fn must return a scalar")
        out.backward()
        if wrt.grad is None:
            raise ValueError("grad_check: wrt received no gradient")
        analytic = wrt.grad.reshape(-1).astype(np.float64)

        flat = wrt.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= n_coords else np.sort(rng.choice(n, n_coords))
        worst = 0.0
        for i in coords:
            keep = flat[i]
            flat[i] = keep + h
            f_plus = fn().item()
            flat[i] = keep - h
            f_minus = fn().item()
            flat[i] = keep
            fd = (f_plus - f_minus) / (2.0 * h)
            rel = abs(analytic[i] - fd) / (abs(fd) + rel_floor)
            worst = max(worst, rel)
        return worst
    finally:
        wrt.data = orig
        wrt.grad = None
