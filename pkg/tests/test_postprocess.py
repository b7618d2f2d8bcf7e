import numpy as np
import pytest
from scipy.fft import dctn

from idlab.diffusion.images import ImageBatch
from idlab.harness.synth import synth_dataset
from idlab.numerics import NumericsError, Rng, Tensor
from idlab.postprocess.diffpure import DiffpureConfig, diffpure
from idlab.postprocess.jpeg import JpegConfig, jpeg_like

from conftest import const_stub


def _corpus(n_ids=6, seed=0):
    return synth_dataset(n_ids, 15, seed=seed).all_images()


def _hf_energy(images: np.ndarray) -> float:
    """Blockwise DCT energy outside the top-left 2x2 coefficients."""
    b, c, h, w = images.shape
    blocks = images.reshape(b, c, h // 8, 8, w // 8, 8)
    coefs = dctn(blocks, axes=(3, 5), norm="ortho")
    total = float(np.sum(coefs**2))
    low = float(np.sum(coefs[:, :, :, :2, :, :2] ** 2))
    return total - low


def test_jpeg_q100_near_lossless():
    imgs = _corpus().images.data
    out = jpeg_like(imgs, JpegConfig(quality=100))
    # tolerance is 2/255 in [0,1] pixel units = 4/255 in the [-1,1] convention
    assert np.abs(out - imgs).max() <= 4.0 / 255.0


def test_jpeg_constant_image_bit_identical():
    for value in (-1.0, -0.123, 0.0, 0.5, 251 / 127.5 - 1.0, 1.0):
        img = np.full((2, 1, 32, 32), value, np.float32)
        out = jpeg_like(img, JpegConfig(quality=10))
        assert np.array_equal(out, img), f"constant {value} not preserved"


def test_jpeg_q10_kills_high_frequency_energy():
    imgs = _corpus(n_ids=10).images.data
    out = jpeg_like(imgs, JpegConfig(quality=10))
    before, after = _hf_energy(imgs), _hf_energy(out)
    assert after <= 0.2 * before, f"HF energy only reduced {1 - after / before:.1%}"


def test_jpeg_idempotent_within_energy_tolerance():
    imgs = _corpus().images.data
    once = jpeg_like(imgs, JpegConfig(quality=75))
    twice = jpeg_like(once, JpegConfig(quality=75))
    assert float(np.sum((twice - once) ** 2)) <= 0.01 * float(np.sum(once**2))


def test_jpeg_range_and_determinism():
    rng = Rng(3, 1)
    x = np.clip(rng.normal((3, 1, 40, 40)), -1, 1).astype(np.float32)  # pads to 48
    a = jpeg_like(x, JpegConfig(quality=30))
    b = jpeg_like(x, JpegConfig(quality=30))
    assert np.array_equal(a, b)
    assert a.shape == x.shape
    assert a.min() >= -1.0 and a.max() <= 1.0


def test_jpeg_imagebatch_passthrough():
    batch = ImageBatch(Tensor(np.zeros((2, 1, 32, 32), np.float32)), [4, 7])
    out = jpeg_like(batch, JpegConfig(quality=50))
    assert isinstance(out, ImageBatch)
    assert out.ids == [4, 7]


def test_jpeg_config_validation():
    with pytest.raises(ValueError):
        JpegConfig(quality=0)
    with pytest.raises(ValueError):
        JpegConfig(quality=101)
    assert (JpegConfig(quality=50).table >= 1).all()
    assert (JpegConfig(quality=1).table <= 255).all()


def test_jpeg_lower_quality_is_lossier():
    imgs = _corpus().images.data
    errs = [float(np.mean((jpeg_like(imgs, JpegConfig(quality=q)) - imgs) ** 2))
            for q in (90, 50, 10)]
    assert errs[0] < errs[1] < errs[2]


# ---------------------------------------------------------------- diffpure


def test_diffpure_noop_limit(sched, tiny_denoiser):
    x = _corpus().images.data[:4]
    cfg = DiffpureConfig(tiny_denoiser, t_star=sched.t_min, steps=1)
    out = diffpure(ImageBatch(Tensor(x), [0] * 4), cfg, Rng(0, 47), sched)
    assert np.abs(out.images.data - x).max() <= 0.02


def test_diffpure_deterministic_given_rng(sched, tiny_denoiser):
    x = ImageBatch(Tensor(_corpus().images.data[:3]), [0, 1, 2])
    cfg = DiffpureConfig(tiny_denoiser, t_star=0.3)
    a = diffpure(x, cfg, Rng(5, 47), sched)
    b = diffpure(x, cfg, Rng(5, 47), sched)
    c = diffpure(x, cfg, Rng(6, 47), sched)
    assert np.array_equal(a.images.data, b.images.data)
    assert not np.array_equal(a.images.data, c.images.data)
    assert a.ids == [0, 1, 2]


def test_diffpure_range_and_t_validation(sched, tiny_denoiser):
    x = ImageBatch(Tensor(_corpus().images.data[:2]), [0, 1])
    out = diffpure(x, DiffpureConfig(tiny_denoiser, t_star=0.5), Rng(1, 47), sched)
    assert out.images.data.min() >= -1.0 and out.images.data.max() <= 1.0
    with pytest.raises(ValueError):
        diffpure(x, DiffpureConfig(tiny_denoiser, t_star=1.5), Rng(1, 47), sched)


def test_diffpure_nonfinite_purifier_raises(sched):
    bad = const_stub(float("nan"))
    x = ImageBatch(Tensor(np.zeros((1, 1, 32, 32), np.float32)), [0])
    with pytest.raises(NumericsError):
        diffpure(x, DiffpureConfig(bad, t_star=0.3), Rng(0, 47), sched)
