"""No-reference quality features: MSCN coefficients, their pairwise products,
and (A)GGD moment-ratio fits, scored as Mahalanobis distance to clean-corpus
statistics. Higher score = lower perceptual quality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import gamma as gamma_fn

C_STAB = 1.0 / 255.0**2  # stabilizer in the [0,1] intensity convention


def _gaussian_kernel(size: int = 7, std: float = 7.0 / 6.0) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * std**2))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gaussian_kernel()


@dataclass
class MscnField:
    ihat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


def _to_unit(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    return (img + 1.0) / 2.0


def _mscn01(img: np.ndarray) -> MscnField:
    if img.shape[0] < 7 or img.shape[1] < 7:
        raise ValueError("image smaller than the 7x7 kernel")
    # periodic borders make the coefficient field equivariant to circular shifts
    mu = ndimage.correlate(img, _KERNEL, mode="wrap")
    var = ndimage.correlate((img - mu) ** 2, _KERNEL, mode="wrap")
    sigma = np.sqrt(np.clip(var, 0.0, None))
    return MscnField((img - mu) / (sigma + C_STAB), mu, sigma)


def mscn(image) -> MscnField:
    """Mean-subtracted contrast-normalized coefficients, periodic borders."""
    return _mscn01(_to_unit(image))


def pairwise_products(field: MscnField) -> dict:
    """Neighboring-coefficient products: horizontal, vertical, two diagonals."""
    i = field.ihat
    return {
        "H": i[:, :-1] * i[:, 1:],
        "V": i[:-1, :] * i[1:, :],
        "D1": i[:-1, :-1] * i[1:, 1:],
        "D2": i[:-1, 1:] * i[1:, :-1],
    }


# ------------------------------------------------------- moment-ratio fitting

_GAMMA_GRID = np.arange(0.2, 10.0, 0.001)
_GGD_RATIO = (gamma_fn(1.0 / _GAMMA_GRID) * gamma_fn(3.0 / _GAMMA_GRID)) / gamma_fn(
    2.0 / _GAMMA_GRID
) ** 2
_AGGD_RATIO = gamma_fn(2.0 / _GAMMA_GRID) ** 2 / (
    gamma_fn(1.0 / _GAMMA_GRID) * gamma_fn(3.0 / _GAMMA_GRID)
)


def fit_ggd(x: np.ndarray) -> tuple:
    """(shape, variance) by matching E[x^2]/E[|x|]^2 on the gamma grid."""
    x = np.asarray(x, dtype=np.float64).ravel()
    m_abs = np.abs(x).mean()
    m_sq = (x**2).mean()
    if m_abs < 1e-12 or m_sq < 1e-12:
        return float(_GAMMA_GRID[-1]), 0.0
    rho = m_sq / m_abs**2
    shape = float(_GAMMA_GRID[np.argmin(np.abs(_GGD_RATIO - rho))])
    return shape, float(m_sq)


def fit_aggd(x: np.ndarray) -> tuple:
    """(shape, left variance, right variance, mean) for asymmetric data."""
    x = np.asarray(x, dtype=np.float64).ravel()
    left, right = x[x < 0], x[x >= 0]
    if left.size == 0 or right.size == 0:
        shape, var = fit_ggd(x)
        return shape, var, var, 0.0
    sig_l = np.sqrt((left**2).mean())
    sig_r = np.sqrt((right**2).mean())
    if sig_l < 1e-12 or sig_r < 1e-12:
        return float(_GAMMA_GRID[-1]), float(sig_l**2), float(sig_r**2), 0.0
    gam = sig_l / sig_r
    r_hat = np.abs(x).mean() ** 2 / (x**2).mean()
    big_r = r_hat * (gam**3 + 1.0) * (gam + 1.0) / (gam**2 + 1.0) ** 2
    alpha = float(_GAMMA_GRID[np.argmin(np.abs(_AGGD_RATIO - big_r))])
    eta = (sig_r - sig_l) * gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha)
    return alpha, float(sig_l**2), float(sig_r**2), float(eta)


def _scale_feats(imgs: list) -> list:
    fields = [_mscn01(im) for im in imgs]
    out = list(fit_ggd(np.concatenate([f.ihat.ravel() for f in fields])))
    prods = [pairwise_products(f) for f in fields]
    for name in ("H", "V", "D1", "D2"):
        out.extend(fit_aggd(np.concatenate([p[name].ravel() for p in prods])))
    return out


def brisque_features(image) -> np.ndarray:
    """18 features per scale (GGD of MSCN + AGGD of 4 product maps), 2 scales."""
    img = _to_unit(image)
    feats = _scale_feats([img])
    # half scale: antialias, then pool every decimation phase — a circular
    # shift of the input only permutes the phases, keeping the fits stable
    smooth = ndimage.correlate(img, _KERNEL, mode="wrap")
    feats.extend(_scale_feats([smooth[a::2, b::2] for a in (0, 1) for b in (0, 1)]))
    return np.asarray(feats, dtype=np.float64)


@dataclass
class BrisqueCorpus:
    mean: np.ndarray
    cov_inv: np.ndarray
    n: int


def fit_brisque_corpus(images) -> BrisqueCorpus:
    """Reference statistics from clean images; covariance shrunk toward a
    scaled identity (n is only a few times the feature count) and fitted on
    shift-augmented copies so 1-pixel jitter stays inside natural variation."""
    data = np.asarray(images.images.data if hasattr(images, "images") else images)
    feats = np.stack(
        [
            brisque_features(v)
            for img in data
            for v in (img, np.roll(img, 1, axis=-1), np.roll(img, 1, axis=-2))
        ]
    )
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False, ddof=1)
    p = feats.shape[1]
    cov += (0.05 * np.trace(cov) / p + 1e-9) * np.eye(p)
    return BrisqueCorpus(mean, np.linalg.inv(cov), data.shape[0])


def brisque_score(image, corpus: BrisqueCorpus) -> float:
    d = brisque_features(image) - corpus.mean
    return float(np.sqrt(max(d @ corpus.cov_inv @ d, 0.0)))
