"""Wall-clock comparison of amortized vs iterative defenses.

`timing_bench` reports median per-image protect time for a trained defender
(one forward pass) against full-budget PGD on the same images, alongside an
op-trace check showing the defender executes an input-independent program.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from ..diffusion.images import ImageBatch
from ..diffusion.schedule import NoiseSchedule, cosine_schedule
from ..imagewise.pgd import PgdConfig, pgd_defend
from ..numerics.engine import Tensor, no_grad, op_trace
from ..numerics.rng import Rng


@dataclass
class BenchResult:
    rid_per_image_s: float
    pgd_per_image_s: float
    op_counts: list = field(default_factory=list)
    reps: int = 0

    @property
    def speedup(self) -> float:
        return self.pgd_per_image_s / self.rid_per_image_s

    @property
    def trace_input_independent(self) -> bool:
        return len(set(self.op_counts)) <= 1 and len(self.op_counts) >= 2


def _median_per_image(fn, batch_size: int, reps: int, warmup: int) -> float:
    times = []
    for i in range(warmup + reps):
        t0 = time.perf_counter()
        fn(i)
        dt = time.perf_counter() - t0
        if i >= warmup:  # warm-up reps pay allocator / cache costs, drop them
            times.append(dt / batch_size)
    return statistics.median(times)


def timing_bench(net, target, images: ImageBatch, *, pgd_cfg: PgdConfig | None = None,
                 sched: NoiseSchedule | None = None, reps: int = 5, warmup: int = 1,
                 pgd_reps: int = 1, seed: int = 0) -> BenchResult:
    """Median per-image wall time: defender forward vs full PGD budget.

    The op-trace probe runs the defender on `reps` distinct inputs and records
    the engine op count for each; a constant count across inputs certifies the
    defender's control flow does not branch on pixel values.
    """
    sched = sched or cosine_schedule()
    pgd_cfg = pgd_cfg or PgdConfig(eps_budget=net.eps_budget)
    rng = Rng(seed, 29)
    x = images.images.data
    b = x.shape[0]

    def run_rid(_i):
        with no_grad():
            net.forward(Tensor(x))

    def run_pgd(i):
        pgd_defend(images, target, pgd_cfg, rng.substream(f"bench-{i}"), sched)

    rid_t = _median_per_image(run_rid, b, reps, warmup)
    pgd_t = _median_per_image(run_pgd, b, pgd_reps, warmup=0)

    counts = []
    probe_rng = rng.substream("trace")
    for i in range(max(reps, 3)):
        xi = np.clip(x + 0.05 * probe_rng.normal(x.shape), -1.0, 1.0).astype(np.float32)
        with no_grad(), op_trace() as c:
            net.forward(Tensor(xi))
        counts.append(c[0])
    return BenchResult(rid_per_image_s=rid_t, pgd_per_image_s=pgd_t,
                       op_counts=counts, reps=reps)
