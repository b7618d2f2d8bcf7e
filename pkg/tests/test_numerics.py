"""Engine-level tests: gradients vs finite differences, determinism, optimizer math."""

import numpy as np
import pytest

from idlab.numerics import (
    AdamState,
    GradBundle,
    NumericsError,
    Rng,
    Tensor,
    adam_step,
    clamp,
    clip_global_norm,
    concat,
    conv2d,
    embedding,
    gaussian,
    gelu,
    grad_check,
    layer_norm,
    matmul,
    no_grad,
    op_trace,
    sigmoid,
    silu,
    softmax,
    stop_gradient,
    tabs,
    tanh,
    texp,
    tlog,
    tmean,
    tsqrt,
    tsum,
    upsample_nearest2d,
)

RNG = Rng(1234)
TOL = 1e-5


def _t(shape, rng=RNG, scale=1.0, requires_grad=True):
    x = Tensor(scale * rng.normal(shape, dtype=np.float64))
    x.requires_grad = requires_grad
    return x


# ---------------------------------------------------------------- gradients


def test_grad_elementwise_chain():
    x = _t((4, 5))
    fn = lambda: tsum(tanh(x) * sigmoid(x) + texp(0.1 * x))
    assert grad_check(fn, x) < TOL


def test_grad_silu_gelu():
    x = _t((3, 7))
    assert grad_check(lambda: tsum(silu(x)), x) < TOL
    assert grad_check(lambda: tsum(gelu(x)), x) < TOL


def test_grad_log_sqrt_abs():
    x = Tensor(np.abs(RNG.normal((4, 4), dtype=np.float64)) + 0.5, requires_grad=True)
    assert grad_check(lambda: tsum(tlog(x) + tsqrt(x)), x) < TOL
    y = _t((5, 5))
    # keep fd probes away from the |.| kink
    y.data[np.abs(y.data) < 0.05] = 0.3
    assert grad_check(lambda: tsum(tabs(y)), y) < TOL


def test_abs_subgradient_at_zero_is_zero():
    x = Tensor(np.zeros((3,)))
    x.requires_grad = True
    tsum(tabs(x)).backward()
    assert np.all(x.grad == 0.0)


def test_grad_matmul_batched():
    a = _t((2, 3, 4))
    b = _t((2, 4, 5))
    assert grad_check(lambda: tsum(matmul(a, b) ** 2), a) < TOL
    assert grad_check(lambda: tsum(matmul(a, b) ** 2), b) < TOL


def test_grad_broadcast_add_mul():
    a = _t((3, 1, 5))
    b = _t((4, 5))
    assert grad_check(lambda: tsum((a + b) * (a * b + 1.0)), a) < TOL
    assert grad_check(lambda: tsum((a + b) * (a * b + 1.0)), b) < TOL


def test_grad_reductions_and_shapes():
    x = _t((2, 3, 4))
    assert grad_check(lambda: tsum(tmean(x, axis=1) ** 2), x) < TOL
    assert grad_check(lambda: tsum(x.reshape(6, 4) ** 3), x) < TOL
    assert grad_check(lambda: tsum(x.transpose(2, 0, 1) * 2.0), x) < TOL


def test_grad_getitem_concat():
    x = _t((4, 6))
    y = _t((2, 6))
    assert grad_check(lambda: tsum(x[1:3] ** 2), x) < TOL
    assert grad_check(lambda: tsum(concat([x, y], axis=0) ** 2), y) < TOL


def test_grad_softmax_layernorm():
    x = _t((3, 8))
    w = Tensor(np.arange(24, dtype=np.float64).reshape(3, 8) / 24.0)
    assert grad_check(lambda: tsum(softmax(x, axis=-1) * w), x) < TOL
    g = _t((8,), scale=0.5)
    b = _t((8,), scale=0.5)
    assert grad_check(lambda: tsum(layer_norm(x, g, b) * w), x) < 1e-4
    assert grad_check(lambda: tsum(layer_norm(x, g, b) * w), g) < TOL
    assert grad_check(lambda: tsum(layer_norm(x, g, b) * w), b) < TOL


def test_grad_clamp_passthrough_and_saturation():
    x = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]))
    x.requires_grad = True
    tsum(clamp(x, -1.0, 1.0) * 3.0).backward()
    assert np.allclose(x.grad, [0.0, 3.0, 3.0, 3.0, 0.0])


def test_grad_embedding_scatter():
    table = _t((5, 3))
    ids = np.array([1, 1, 4, 0])
    assert grad_check(lambda: tsum(embedding(table, ids) ** 2), table) < TOL


def test_grad_conv2d():
    x = _t((2, 3, 6, 6), scale=0.5)
    w = _t((4, 3, 3, 3), scale=0.3)
    b = _t((4,), scale=0.1)
    assert grad_check(lambda: tsum(conv2d(x, w, b, stride=1, padding=1) ** 2), x) < 1e-4
    assert grad_check(lambda: tsum(conv2d(x, w, b, stride=1, padding=1) ** 2), w) < 1e-4
    assert grad_check(lambda: tsum(conv2d(x, w, b, stride=2, padding=1) ** 2), w) < 1e-4
    assert grad_check(lambda: tsum(conv2d(x, w, b) ** 2), b) < TOL


def test_conv2d_channel_mismatch_raises():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Tensor(np.zeros((3, 5, 3, 3)))
    with pytest.raises(NumericsError):
        conv2d(x, w, Tensor(np.zeros(3)))


def test_grad_upsample_nearest():
    x = _t((2, 3, 4, 4))
    assert grad_check(lambda: tsum(upsample_nearest2d(x) ** 2), x) < TOL


def test_stop_gradient_blocks_flow():
    x = _t((3,))
    y = tsum(stop_gradient(x) * x)
    y.backward()
    # d/dx [c*x] with c = stopgrad(x) values
    assert np.allclose(x.grad, x.data)


def test_no_grad_records_nothing():
    x = _t((3,))
    with no_grad():
        y = tsum(x * x)
    assert y._parents == ()
    with pytest.raises(RuntimeError):
        y.backward()


# ------------------------------------------------------------- determinism


def test_backward_bit_identical_across_runs():
    def run():
        rng = Rng(7, 3)
        x = Tensor(rng.normal((4, 3, 8, 8)))
        x.requires_grad = True
        w = Tensor(0.1 * rng.normal((6, 3, 3, 3)))
        w.requires_grad = True
        b = Tensor(np.zeros(6, dtype=np.float32))
        b.requires_grad = True
        h = silu(conv2d(x, w, b))
        loss = tsum(h * h) + tsum(softmax(h.reshape(4, -1), axis=-1))
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1.tobytes() == l2.tobytes()
    assert gx1.tobytes() == gx2.tobytes()
    assert gw1.tobytes() == gw2.tobytes()


def test_op_trace_counts_and_input_independence():
    w = Tensor(RNG.normal((4, 4)))

    def f(x):
        with op_trace() as n:
            y = tsum(tanh(matmul(x, w)))
        return n[0], y

    n1, _ = f(Tensor(np.ones((2, 4), dtype=np.float32)))
    n2, _ = f(Tensor(RNG.normal((2, 4))))
    assert n1 == n2 > 0


# --------------------------------------------------------------------- rng


def test_rng_reproducible_and_streams_differ():
    a = Rng(42, 0).normal((10,))
    b = Rng(42, 0).normal((10,))
    c = Rng(42, 1).normal((10,))
    d = Rng(43, 0).normal((10,))
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()
    assert a.tobytes() != d.tobytes()


def test_rng_substream_stable_and_independent():
    r = Rng(5, 9)
    s1 = r.substream("noise").normal((6,))
    s1_again = Rng(5, 9).substream("noise").normal((6,))
    s2 = r.substream("init").normal((6,))
    assert s1.tobytes() == s1_again.tobytes()
    assert s1.tobytes() != s2.tobytes()


def test_gaussian_moments():
    z = gaussian(Rng(0, 0), (1_000_000,)).data.astype(np.float64)
    assert abs(z.mean()) < 5e-3
    assert abs(z.std() - 1.0) < 5e-3
    assert abs(np.mean(z**3)) < 2e-2  # skewness ~ 0
    assert abs(np.mean(z**4) - 3.0) < 5e-2  # kurtosis ~ 3


# ------------------------------------------------------------------- optim


def test_adam_first_step_matches_hand_derivation():
    # After one step: mhat = g, vhat = g*g  =>  update = lr * g / (|g| + eps)
    p = {"w": Tensor(np.array([1.0, -2.0, 3.0], dtype=np.float32))}
    g = np.array([0.5, -0.25, 0.0], dtype=np.float32)
    st = AdamState(lr=0.01)
    adam_step(p, GradBundle({"w": g}), st)
    expect = np.array([1.0, -2.0, 3.0]) - 0.01 * g / (np.abs(g) + st.eps)
    assert np.allclose(p["w"].data, expect, atol=1e-7)
    assert st.t == 1


def test_adam_shape_mismatch_raises():
    p = {"w": Tensor(np.zeros((3,)))}
    with pytest.raises(NumericsError):
        adam_step(p, GradBundle({"w": np.zeros((4,))}), AdamState())


def test_grad_bundle_ops():
    g1 = GradBundle({"a": np.array([3.0, 4.0])})
    g2 = GradBundle({"a": np.array([1.0, 1.0])})
    assert g1.global_norm() == pytest.approx(5.0)
    assert np.allclose(g1.add(g2).grads["a"], [4.0, 5.0])
    assert np.allclose(g1.scaled(2.0).grads["a"], [6.0, 8.0])
    clipped = clip_global_norm(g1, 1.0)
    assert clipped.global_norm() == pytest.approx(1.0)
    with pytest.raises(NumericsError):
        g1.add(GradBundle({"b": np.zeros(2)}))
