"""Low-rank adapters over frozen denoiser weights.

Per adapted layer the update is scale * B @ A with A: (rank, in) and
B: (out, rank); B starts at zero so a fresh adapter is an exact no-op. Conv
kernels are treated as (C_out, C_in*k*k); linear weights are stored (in, out)
so their update is transposed into place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffusion.denoiser import Denoiser
from ..numerics import Rng, Tensor, matmul


class RankError(ValueError):
    pass


def default_targets(model: Denoiser) -> list:
    """The capacity-carrying resblock weights: convs plus conditioning projections."""
    out = []
    for name in model.arch.block_names():
        out += [f"{name}.c1.w", f"{name}.c2.w", f"{name}.emb.w"]
    return out


def _dims(shape) -> tuple:
    if len(shape) == 4:  # conv (C_out, C_in, k, k)
        return shape[0], int(np.prod(shape[1:]))
    if len(shape) == 2:  # linear stored (in, out)
        return shape[1], shape[0]
    raise RankError(f"cannot adapt a weight of shape {shape}")


@dataclass
class AdapterSet:
    rank: int
    scale: float = 1.0
    mats: dict = field(default_factory=dict)  # name -> (A, B)

    @staticmethod
    def build(model: Denoiser, rank: int, scale: float = 1.0, targets=None, seed: int = 0) -> "AdapterSet":
        if rank < 1:
            raise RankError("rank must be >= 1")
        rng = Rng(seed, 13).substream("lora-init")
        mats = {}
        for name in targets if targets is not None else default_targets(model):
            out_d, in_d = _dims(model.params[name].shape)
            if rank > min(out_d, in_d):
                raise RankError(f"rank {rank} > min dims of {name} {(out_d, in_d)}")
            a = (rng.normal((rank, in_d), dtype=np.float64) / np.sqrt(in_d)).astype(np.float32)
            mats[name] = (
                Tensor(a, requires_grad=True),
                Tensor(np.zeros((out_d, rank), np.float32), requires_grad=True),
            )
        return AdapterSet(rank=rank, scale=scale, mats=mats)

    def effective_weight(self, name: str, base: Tensor) -> Tensor:
        if name not in self.mats:
            return base
        a, b = self.mats[name]
        delta = matmul(b, a) * self.scale  # (out, in)
        if len(base.shape) == 4:
            return base + delta.reshape(base.shape)
        return base + delta.transpose(1, 0)

    def param_dict(self) -> dict:
        out = {}
        for name, (a, b) in sorted(self.mats.items()):
            out[f"lora.{name}.A"] = a
            out[f"lora.{name}.B"] = b
        return out

    def n_params(self) -> int:
        return sum(a.size + b.size for a, b in self.mats.values())
