"""JPEG-style blockwise DCT quantization for grayscale images in [-1, 1].

Only the lossy transform matters here (no entropy coding, no file format):
level-shift to [0,255], 8x8 orthonormal DCT, round to multiples of the scaled
standard luminance table, invert, clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from ..diffusion.images import ImageBatch

_BLOCK = 8

# standard luminance quantization table
_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class JpegConfig:
    quality: int = 75

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality {self.quality} outside [1, 100]")

    @property
    def table(self) -> np.ndarray:
        q = self.quality
        scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
        return np.clip(np.floor((_LUMA * scale + 50.0) / 100.0), 1.0, 255.0)


def _blocks(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // _BLOCK, _BLOCK, w // _BLOCK, _BLOCK)


def jpeg_like(image, cfg: JpegConfig = JpegConfig()):
    """Quantize in the DCT domain; deterministic, range-preserving."""
    batch = isinstance(image, ImageBatch)
    x = image.images.data if batch else np.asarray(image, np.float32)
    b, c, h, w = x.shape
    ph = (-h) % _BLOCK
    pw = (-w) % _BLOCK
    y = (x.astype(np.float64) + 1.0) * 127.5 - 128.0
    if ph or pw:
        y = np.pad(y, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
    blk = _blocks(y)
    coef = dctn(blk, axes=(3, 5), norm="ortho")
    t = cfg.table[None, None, None, :, None, :]
    quant = np.round(coef / t) * t
    quant[:, :, :, 0, :, 0] = coef[:, :, :, 0, :, 0]  # DC passes through: constants untouched
    coef = quant
    y = idctn(coef, axes=(3, 5), norm="ortho").reshape(y.shape)[:, :, :h, :w]
    out = np.clip((y + 128.0) / 127.5 - 1.0, -1.0, 1.0).astype(np.float32)
    if batch:
        return ImageBatch(out, list(image.ids))
    return out
