"""Continuous noise schedules for the forward process x_t = alpha(t) x0 + sigma(t) eps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..numerics import Rng


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Signal/noise scalings plus the loss weighting w(t), all positive on the domain."""

    alpha: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    weight: Callable[[np.ndarray], np.ndarray]
    t_min: float = 0.002
    t_max: float = 0.998
    name: str = "schedule"

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.t_min) or np.any(t > self.t_max):
            raise ScheduleError(f"t outside schedule domain [{self.t_min}, {self.t_max}]")
        return t

    def draw_t(self, rng: Rng, n: int = 1) -> np.ndarray:
        return rng.uniform((n,), self.t_min, self.t_max)

    def snr_ratio(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.alpha(t) / self.sigma(t)


def cosine_schedule(t_min: float = 0.002, t_max: float = 0.998) -> NoiseSchedule:
    """alpha=cos(pi t/2), sigma=sin(pi t/2), w=1; smooth, needs no discretization table."""
    return NoiseSchedule(
        alpha=lambda t: np.cos(np.pi * np.asarray(t, dtype=np.float64) / 2.0),
        sigma=lambda t: np.sin(np.pi * np.asarray(t, dtype=np.float64) / 2.0),
        weight=lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
        t_min=t_min,
        t_max=t_max,
        name="cosine",
    )


def validate_schedule(sched: NoiseSchedule, grid_points: int = 1000) -> None:
    """Positivity, strictly-decreasing SNR, and endpoint SNR bounds, on a dense grid."""
    t = np.linspace(sched.t_min, sched.t_max, grid_points)
    a, s = sched.alpha(t), sched.sigma(t)
    if np.any(a <= 0) or np.any(s <= 0):
        raise ScheduleError("alpha/sigma must be strictly positive on the domain")
    if np.any(sched.weight(t) <= 0):
        raise ScheduleError("weight must be strictly positive on the domain")
    ratio = a / s
    if np.any(np.diff(ratio) >= 0):
        raise ScheduleError("alpha/sigma must be strictly decreasing")
    if ratio[0] < 100.0:
        raise ScheduleError(f"alpha/sigma at t_min is {ratio[0]:.3f}, need >= 100")
    if ratio[-1] > 0.02:
        raise ScheduleError(f"alpha/sigma at t_max is {ratio[-1]:.5f}, need <= 0.02")
