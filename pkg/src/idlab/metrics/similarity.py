"""Identity similarity metrics from the toy embedder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion.images import ImageBatch
from .embedder import EmbeddingModel


@dataclass(frozen=True)
class IsmResult:
    ism: float | None  # None when nothing was detected
    dr: float
    aism: float
    n_detected: int


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def ism(gen: ImageBatch, refs: ImageBatch, emb: EmbeddingModel) -> IsmResult:
    """Cosine of mean detected embeddings; aISM = ISM * detection rate.

    Detection = classifier max-softmax >= tau, applied to both sets; refs fall
    back to all images if none pass (degenerate reference set).
    """
    if len(refs) == 0:
        raise ValueError("empty reference set")
    _, conf_g = emb.predict(gen)
    det_g = conf_g >= emb.tau
    dr = float(det_g.mean())
    if not det_g.any():
        return IsmResult(None, 0.0, 0.0, 0)

    _, conf_r = emb.predict(refs)
    det_r = conf_r >= emb.tau
    if not det_r.any():
        det_r = np.ones(len(refs), bool)
    e_g = emb.embed(gen)[det_g].mean(axis=0)
    e_r = emb.embed(refs)[det_r].mean(axis=0)
    s = _cosine(e_g, e_r)
    return IsmResult(s, dr, s * dr, int(det_g.sum()))
