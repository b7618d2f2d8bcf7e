"""Diffusion-loss probe curves and perturbation statistics.

Probes draw (t, eps) from substreams keyed only by (seed, grid position,
repetition, chunk) — never by image content — so curves for different image
sets under the same seed are exactly paired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..diffusion.denoiser import Denoiser
from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule
from ..diffusion.training import forward_diffuse
from ..numerics import Rng, Tensor, no_grad

DEFAULT_T_GRID = tuple(np.round(np.linspace(0.1, 0.9, 9), 3))
_CHUNK = 36


@dataclass
class ProbeCurve:
    t_grid: np.ndarray
    values: np.ndarray
    seed: int
    n_rep: int

    def finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


def diffusion_loss_probe(
    model: Denoiser,
    images: ImageBatch,
    t_grid=DEFAULT_T_GRID,
    sched: NoiseSchedule | None = None,
    seed: int = 0,
    n_rep: int = 4,
) -> ProbeCurve:
    """Per-t mean diffusion loss (null condition), paired noise across calls."""
    from ..diffusion.schedule import cosine_schedule

    sched = sched or cosine_schedule()
    t_grid = np.asarray(t_grid, dtype=np.float64)
    sched.check_t(t_grid)
    data = images.images.data
    n = data.shape[0]
    values = np.zeros(len(t_grid))
    with no_grad():
        for k, t in enumerate(t_grid):
            acc = 0.0
            for rep in range(n_rep):
                for lo in range(0, n, _CHUNK):
                    x = Tensor(data[lo : lo + _CHUNK])
                    rng = Rng(seed, 0).substream(f"probe/{k}/{rep}/{lo}")
                    eps = Tensor(rng.normal(x.shape))
                    x_t = forward_diffuse(x, float(t), eps, sched)
                    pred = model.forward(x_t, float(t)).data
                    acc += float(np.sum((pred - eps.data) ** 2))
            values[k] = acc / (n_rep * n)
    return ProbeCurve(t_grid, values, seed, n_rep)


def probe_elevation(defended: ProbeCurve, clean: ProbeCurve) -> float:
    """Mean curve gap; positive means the defense raised the loss."""
    if not np.array_equal(defended.t_grid, clean.t_grid):
        raise ValueError("probe curves on different grids")
    return float(np.mean(defended.values - clean.values))


@dataclass
class PerturbationHistogram:
    counts: np.ndarray
    edges: np.ndarray
    excess_kurtosis: float
    bound_mass: float  # fraction of values in the two outermost bins


def perturbation_histogram(deltas, eps_budget: float, bins: int = 51) -> PerturbationHistogram:
    flat = np.concatenate([np.asarray(d.data if isinstance(d, Tensor) else d).ravel() for d in deltas])
    counts, edges = np.histogram(flat, bins=bins, range=(-eps_budget, eps_budget))
    kurt = float(stats.kurtosis(flat, fisher=True))
    bound = float((counts[0] + counts[-1]) / max(counts.sum(), 1))
    return PerturbationHistogram(counts, edges, kurt, bound)


def histogram_chisq_p(a: PerturbationHistogram, b: PerturbationHistogram) -> float:
    """Two-sample chi-square p-value; low p = the histograms differ."""
    table = np.stack([a.counts, b.counts]).astype(np.float64)
    keep = table.sum(axis=0) > 0
    _, p, _, _ = stats.chi2_contingency(table[:, keep])
    return float(p)
