"""Feed-forward perturbation generator: patch-embedding transformer.

32x32 inputs become 64 tokens of 4x4 patches; four pre-norm attention/MLP
blocks; a zero-initialized projection maps tokens back to patch pixels. The
head is eps_budget * tanh(raw) * (1 - 1e-6), keeping every coordinate strictly
inside the open budget interval even after float32 tanh saturation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import (
    Rng,
    Tensor,
    layer_norm,
    matmul,
    gelu,
    softmax,
    tanh,
)

BOUND_SHRINK = 1.0 - 1e-6


@dataclass(frozen=True)
class DefenderArch:
    layers: int = 4
    dim: int = 128
    patch: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    res: int = 32

    @property
    def tokens(self) -> int:
        return (self.res // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch


def _lin(rng: Rng, d_in: int, d_out: int, scale: float | None = None) -> np.ndarray:
    s = scale if scale is not None else np.sqrt(2.0 / d_in)
    return (rng.normal((d_in, d_out), dtype=np.float64) * s).astype(np.float32)


class DefenderNet:
    """delta_phi: image -> bounded perturbation, one pure forward pass."""

    def __init__(self, arch: DefenderArch, eps_budget: float, params: dict):
        if eps_budget <= 0:
            raise ValueError("eps_budget must be positive")
        self.arch = arch
        self.eps_budget = float(eps_budget)
        self.params = params

    @staticmethod
    def build(eps_budget: float, rng: Rng, arch: DefenderArch | None = None) -> "DefenderNet":
        arch = arch or DefenderArch()
        r = rng.substream("defender-init")
        d, ff = arch.dim, arch.dim * arch.mlp_ratio
        p: dict[str, Tensor] = {}

        def add(name, arr):
            p[name] = Tensor(arr, requires_grad=True)

        add("embed.w", _lin(r, arch.patch_dim, d))
        add("embed.b", np.zeros(d, np.float32))
        add("pos", (0.02 * r.normal((arch.tokens, d), dtype=np.float64)).astype(np.float32))
        for i in range(arch.layers):
            pre = f"blk{i}"
            add(f"{pre}.ln1.g", np.ones(d, np.float32))
            add(f"{pre}.ln1.b", np.zeros(d, np.float32))
            add(f"{pre}.qkv.w", _lin(r, d, 3 * d, scale=np.sqrt(1.0 / d)))
            add(f"{pre}.qkv.b", np.zeros(3 * d, np.float32))
            add(f"{pre}.proj.w", _lin(r, d, d, scale=np.sqrt(1.0 / d)))
            add(f"{pre}.proj.b", np.zeros(d, np.float32))
            add(f"{pre}.ln2.g", np.ones(d, np.float32))
            add(f"{pre}.ln2.b", np.zeros(d, np.float32))
            add(f"{pre}.mlp1.w", _lin(r, d, ff))
            add(f"{pre}.mlp1.b", np.zeros(ff, np.float32))
            add(f"{pre}.mlp2.w", _lin(r, ff, d, scale=np.sqrt(1.0 / ff)))
            add(f"{pre}.mlp2.b", np.zeros(d, np.float32))
        add("out.ln.g", np.ones(d, np.float32))
        add("out.ln.b", np.zeros(d, np.float32))
        add("out.w", np.zeros((d, arch.patch_dim), np.float32))  # zero init: delta(x)=0
        add("out.b", np.zeros(arch.patch_dim, np.float32))
        return DefenderNet(arch, eps_budget, p)

    def copy(self) -> "DefenderNet":
        return DefenderNet(
            self.arch,
            self.eps_budget,
            {k: Tensor(v.data.copy(), v.requires_grad) for k, v in self.params.items()},
        )

    # -------------------------------------------------------------- forward

    def _attention(self, x: Tensor, pre: str) -> Tensor:
        a = self.arch
        b, n, d = x.shape
        dh = d // a.heads
        qkv = matmul(x, self.params[f"{pre}.qkv.w"]) + self.params[f"{pre}.qkv.b"]
        qkv = qkv.reshape(b, n, 3, a.heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (b, heads, n, dh)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        att = softmax(scores, axis=-1)
        out = matmul(att, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return matmul(out, self.params[f"{pre}.proj.w"]) + self.params[f"{pre}.proj.b"]

    def _tokens(self, images: Tensor) -> Tensor:
        a = self.arch
        b = images.shape[0]
        g = a.res // a.patch
        x = images.reshape(b, g, a.patch, g, a.patch)
        x = x.transpose(0, 1, 3, 2, 4).reshape(b, a.tokens, a.patch_dim)
        return x

    def _untokens(self, x: Tensor, b: int) -> Tensor:
        a = self.arch
        g = a.res // a.patch
        x = x.reshape(b, g, g, a.patch, a.patch).transpose(0, 1, 3, 2, 4)
        return x.reshape(b, 1, a.res, a.res)

    def forward(self, images: Tensor) -> Tensor:
        """Bounded perturbation, shape of the input; no data-dependent control flow."""
        if images.ndim != 4 or images.shape[2] != self.arch.res or images.shape[3] != self.arch.res:
            raise ValueError(f"expected (B,1,{self.arch.res},{self.arch.res}), got {images.shape}")
        p = self.params
        b = images.shape[0]
        h = matmul(self._tokens(images), p["embed.w"]) + p["embed.b"]
        h = h + p["pos"]
        for i in range(self.arch.layers):
            pre = f"blk{i}"
            h = h + self._attention(layer_norm(h, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"]), pre)
            z = layer_norm(h, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            z = gelu(matmul(z, p[f"{pre}.mlp1.w"]) + p[f"{pre}.mlp1.b"])
            h = h + matmul(z, p[f"{pre}.mlp2.w"]) + p[f"{pre}.mlp2.b"]
        h = layer_norm(h, p["out.ln.g"], p["out.ln.b"])
        raw = matmul(h, p["out.w"]) + p["out.b"]
        delta = tanh(raw) * (self.eps_budget * BOUND_SHRINK)
        return self._untokens(delta, b)
