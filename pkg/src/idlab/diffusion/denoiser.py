"""Toy conditional noise-prediction network.

A small conv U-net over three resolutions (32/16/8 at the default input size)
with a constant channel width. Each residual block receives the sum of a
sinusoidal-time MLP embedding and an identity embedding; cond-table index 0 is
reserved for the null condition. The second conv of every block and the output
head start at zero, so a freshly built model predicts exactly zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..harness.checkpoint import params_fingerprint
from ..numerics import Rng, Tensor, concat, conv2d, embedding, matmul, silu, upsample_nearest2d

# adapter hook: anything implementing effective_weight(name, base) can rewrite
# selected weights at forward time (used for low-rank personalization)
_LEVELS = 3


@dataclass(frozen=True)
class DenoiserArch:
    width: int = 32
    emb_dim: int = 64
    num_ids: int = 64
    in_ch: int = 1
    mid_blocks: int = 2

    def block_names(self):
        names = [f"down{k}.rb" for k in range(_LEVELS)]
        names += [f"mid{j}.rb" for j in range(self.mid_blocks)]
        names += [f"up{k}.rb" for k in reversed(range(_LEVELS - 1))]
        return names


def _conv_init(rng: Rng, c_out: int, c_in: int, k: int) -> np.ndarray:
    fan_in = c_in * k * k
    return (rng.normal((c_out, c_in, k, k), dtype=np.float64) * np.sqrt(2.0 / fan_in)).astype(
        np.float32
    )


def _linear_init(rng: Rng, d_in: int, d_out: int) -> np.ndarray:
    return (rng.normal((d_in, d_out), dtype=np.float64) * np.sqrt(2.0 / d_in)).astype(np.float32)


def _timestep_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of t in [0,1]; geometric frequency ladder."""
    half = dim // 2
    freqs = np.exp(np.linspace(np.log(1.0), np.log(1000.0), half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


class Denoiser:
    """eps-prediction net; forward is a pure function of (params, inputs)."""

    def __init__(self, arch: DenoiserArch, params: dict):
        self.arch = arch
        self.params = params

    # ------------------------------------------------------------- building

    @staticmethod
    def build(arch: DenoiserArch, rng: Rng, trainable: bool = True) -> "Denoiser":
        w, e, cin = arch.width, arch.emb_dim, arch.in_ch
        r = rng.substream("denoiser-init")
        p: dict[str, Tensor] = {}

        def add(name, arr):
            p[name] = Tensor(arr, requires_grad=trainable)

        add("temb.w1", _linear_init(r, e, e))
        add("temb.b1", np.zeros(e, np.float32))
        add("temb.w2", _linear_init(r, e, e))
        add("temb.b2", np.zeros(e, np.float32))
        add("cond.table", (0.3 * r.normal((arch.num_ids, e), dtype=np.float64)).astype(np.float32))
        add("stem.w", _conv_init(r, w, cin, 3))
        add("stem.b", np.zeros(w, np.float32))
        for name in arch.block_names():
            c_in = 2 * w if name.startswith("up") else w
            add(f"{name}.c1.w", _conv_init(r, w, c_in, 3))
            add(f"{name}.c1.b", np.zeros(w, np.float32))
            # scale-and-shift conditioning from [time | identity] features
            add(f"{name}.emb.w", (0.1 * _linear_init(r, 2 * e, 2 * w)).astype(np.float32))
            add(f"{name}.emb.b", np.zeros(2 * w, np.float32))
            add(f"{name}.c2.w", np.zeros((w, w, 3, 3), np.float32))
            add(f"{name}.c2.b", np.zeros(w, np.float32))
            if c_in != w:
                add(f"{name}.sk.w", _conv_init(r, w, c_in, 1))
                add(f"{name}.sk.b", np.zeros(w, np.float32))
        for k in range(_LEVELS - 1):
            add(f"down{k}.ds.w", _conv_init(r, w, w, 3))
            add(f"down{k}.ds.b", np.zeros(w, np.float32))
            add(f"up{k}.us.w", _conv_init(r, w, w, 3))
            add(f"up{k}.us.b", np.zeros(w, np.float32))
        add("head.w", np.zeros((cin, w, 3, 3), np.float32))
        add("head.b", np.zeros(cin, np.float32))
        return Denoiser(arch, p)

    def copy(self, trainable: bool | None = None) -> "Denoiser":
        p = {}
        for k, v in self.params.items():
            p[k] = Tensor(v.data.copy(), v.requires_grad if trainable is None else trainable)
        return Denoiser(self.arch, p)

    def set_trainable(self, flag: bool) -> "Denoiser":
        for v in self.params.values():
            v.requires_grad = flag
        return self

    def fingerprint(self) -> str:
        return params_fingerprint(self.params)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -------------------------------------------------------------- forward

    def _weight(self, name: str, adapters):
        base = self.params[name]
        if adapters is not None:
            return adapters.effective_weight(name, base)
        return base

    def _resblock(self, x: Tensor, emb: Tensor, prefix: str, adapters) -> Tensor:
        b = x.shape[0]
        w = self.arch.width
        h = conv2d(silu(x), self._weight(f"{prefix}.c1.w", adapters), self.params[f"{prefix}.c1.b"])
        e = matmul(emb, self._weight(f"{prefix}.emb.w", adapters)) + self.params[f"{prefix}.emb.b"]
        gain = e[:, :w].reshape(b, w, 1, 1)
        bias = e[:, w:].reshape(b, w, 1, 1)
        h = h * (gain + 1.0) + bias
        h = conv2d(silu(h), self._weight(f"{prefix}.c2.w", adapters), self.params[f"{prefix}.c2.b"])
        if f"{prefix}.sk.w" in self.params:
            x = conv2d(
                x, self._weight(f"{prefix}.sk.w", adapters), self.params[f"{prefix}.sk.b"], padding=0
            )
        return x + h

    def forward(self, x_t: Tensor, t, cond_ids=None, token: Tensor | None = None, adapters=None) -> Tensor:
        """Predict the noise in x_t at time t.

        `t` is a scalar or per-sample vector in the schedule domain. Identity
        conditioning comes from `cond_ids` (None -> null condition for all), or
        from an explicit `token` embedding that overrides the table lookup.
        """
        b = x_t.shape[0]
        tv = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (b,))
        feats = Tensor(_timestep_features(tv, self.arch.emb_dim))

        temb = matmul(feats, self._weight("temb.w1", adapters)) + self.params["temb.b1"]
        temb = matmul(silu(temb), self._weight("temb.w2", adapters)) + self.params["temb.b2"]
        if token is not None:
            ones = Tensor(np.ones((b, 1), np.float32))
            cemb = matmul(ones, token.reshape(1, self.arch.emb_dim))
        else:
            ids = np.zeros(b, np.int64) if cond_ids is None else np.asarray(cond_ids, np.int64)
            if ids.min() < 0 or ids.max() >= self.arch.num_ids:
                raise ValueError("cond id out of table bounds")
            cemb = embedding(self.params["cond.table"], ids)
        # identity features get their own half so time cannot drown them out
        emb = concat([silu(temb), silu(cemb)], axis=1)

        h = conv2d(x_t, self._weight("stem.w", adapters), self.params["stem.b"])
        skips = []
        for k in range(_LEVELS):
            h = self._resblock(h, emb, f"down{k}.rb", adapters)
            if k < _LEVELS - 1:
                skips.append(h)
                h = conv2d(
                    h,
                    self._weight(f"down{k}.ds.w", adapters),
                    self.params[f"down{k}.ds.b"],
                    stride=2,
                )
        for j in range(self.arch.mid_blocks):
            h = self._resblock(h, emb, f"mid{j}.rb", adapters)
        for k in reversed(range(_LEVELS - 1)):
            h = conv2d(
                upsample_nearest2d(h),
                self._weight(f"up{k}.us.w", adapters),
                self.params[f"up{k}.us.b"],
            )
            h = concat([h, skips.pop()], axis=1)
            h = self._resblock(h, emb, f"up{k}.rb", adapters)
        out = conv2d(silu(h), self._weight("head.w", adapters), self.params["head.b"])
        if out.shape != x_t.shape:
            raise ValueError(f"denoiser output {out.shape} != input {x_t.shape}")
        return out
