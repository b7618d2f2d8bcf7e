import numpy as np
import pytest

from idlab.diffusion.denoiser import Denoiser, DenoiserArch
from idlab.diffusion.images import ImageBatch
from idlab.diffusion.schedule import cosine_schedule
from idlab.numerics import Rng, Tensor
from idlab.numerics.engine import matmul, reshape, silu


class StubDenoiser:
    """Denoiser-shaped wrapper around an arbitrary differentiable map."""

    def __init__(self, fn, params=None):
        self.fn = fn
        self.params = params or {}

    def forward(self, x_t, t, cond_ids=None, token=None, adapters=None):
        return self.fn(x_t, t)

    def set_trainable(self, flag):
        for v in self.params.values():
            v.requires_grad = flag
        return self

    def fingerprint(self):
        from idlab.harness.checkpoint import params_fingerprint

        return params_fingerprint(self.params) if self.params else "stub"


def const_stub(value=0.0):
    """eps_hat independent of the input: zero Jacobian."""
    return StubDenoiser(lambda x, t: x * 0.0 + value)


def identity_stub():
    """eps_hat = x_t: Jacobian is the identity."""
    return StubDenoiser(lambda x, t: x * 1.0)


def two_layer_stub(rng: Rng, res: int = 8):
    """Tiny dense nonlinear map with a nontrivial, input-dependent Jacobian."""
    d = res * res
    w1 = Tensor(0.4 * rng.normal((d, d), dtype=np.float64).astype(np.float32),
                requires_grad=True)
    w2 = Tensor(0.4 * rng.normal((d, d), dtype=np.float64).astype(np.float32),
                requires_grad=True)

    def fn(x, t):
        b = x.shape[0]
        h = silu(matmul(reshape(x, (b, d)), w1))
        return reshape(matmul(h, w2), x.shape)

    return StubDenoiser(fn, params={"w1": w1, "w2": w2})


@pytest.fixture(scope="session")
def sched():
    return cosine_schedule()


@pytest.fixture(scope="session")
def tiny_denoiser():
    """Real architecture, narrow and untrained; frozen."""
    arch = DenoiserArch(width=8, emb_dim=16, num_ids=8)
    return Denoiser.build(arch, Rng(5, 11), trainable=False)


@pytest.fixture()
def small_images():
    rng = Rng(99, 1)
    data = np.clip(0.5 * rng.normal((6, 1, 32, 32)), -1, 1).astype(np.float32)
    return ImageBatch(Tensor(data), [0, 0, 1, 1, 2, 2])
