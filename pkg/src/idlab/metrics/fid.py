"""Frechet distance between Gaussian fits of feature distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FidError(ValueError):
    pass


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.n < 2:
            raise FidError("need at least 2 samples")
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise FidError("covariance shape mismatch")
        if np.max(np.abs(self.sigma - self.sigma.T)) > 1e-6:
            raise FidError("covariance not symmetric")
        self.sigma = 0.5 * (self.sigma + self.sigma.T)

    @staticmethod
    def from_features(x) -> "FeatureStats":
        x = np.asarray(x, dtype=np.float64)
        return FeatureStats(x.mean(axis=0), np.cov(x, rowvar=False, ddof=1), x.shape[0])


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    if vals.min() < -1e-6:
        raise FidError(f"{what}: eigenvalue {vals.min():.3e} below tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(g: FeatureStats, r: FeatureStats) -> float:
    """||mu_g - mu_r||^2 + tr(Sg + Sr - 2 (Sg Sr)^(1/2)).

    The cross sqrt is evaluated on the symmetric product Sr^(1/2) Sg Sr^(1/2),
    whose trace equals tr((Sg Sr)^(1/2)); everything in float64.
    """
    if g.mu.size != r.mu.size:
        raise FidError("feature dimension mismatch")
    sr_half = _psd_sqrt(r.sigma, "reference covariance")
    inner = sr_half @ g.sigma @ sr_half
    inner = 0.5 * (inner + inner.T)
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < -1e-6:
        raise FidError(f"cross-product eigenvalue {vals.min():.3e} below tolerance")
    tr_sqrt = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    d2 = float(np.sum((g.mu - r.mu) ** 2))
    return d2 + float(np.trace(g.sigma) + np.trace(r.sigma)) - 2.0 * tr_sqrt
