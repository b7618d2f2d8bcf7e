"""Toy identity embedder: a small convnet classifier whose penultimate layer
(64-dim) doubles as the feature space for FID and identity-similarity metrics.
Detection is modeled as max-softmax confidence >= tau."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion.images import ImageBatch
from ..numerics import (
    AdamState,
    GradBundle,
    Rng,
    Tensor,
    adam_step,
    conv2d,
    matmul,
    no_grad,
    silu,
    softmax,
    tlog,
    tsum,
    zero_grads,
)

EMB_DIM = 64


def _conv_init(rng, c_out, c_in, k):
    fan = c_in * k * k
    return (rng.normal((c_out, c_in, k, k), dtype=np.float64) * np.sqrt(2.0 / fan)).astype(
        np.float32
    )


@dataclass
class EmbeddingModel:
    params: dict
    n_classes: int
    tau: float = 0.5

    @staticmethod
    def build(n_classes: int, rng: Rng, tau: float = 0.5) -> "EmbeddingModel":
        r = rng.substream("embedder-init")
        p = {
            "c1.w": _conv_init(r, 16, 1, 3),
            "c1.b": np.zeros(16, np.float32),
            "c2.w": _conv_init(r, 32, 16, 3),
            "c2.b": np.zeros(32, np.float32),
            "c3.w": _conv_init(r, 32, 32, 3),
            "c3.b": np.zeros(32, np.float32),
            "fc.w": (r.normal((512, EMB_DIM), dtype=np.float64) * np.sqrt(2.0 / 512)).astype(
                np.float32
            ),
            "fc.b": np.zeros(EMB_DIM, np.float32),
            "out.w": (r.normal((EMB_DIM, n_classes), dtype=np.float64) * 0.05).astype(np.float32),
            "out.b": np.zeros(n_classes, np.float32),
        }
        return EmbeddingModel({k: Tensor(v, requires_grad=True) for k, v in p.items()}, n_classes, tau)

    def _trunk(self, x: Tensor) -> Tensor:
        p = self.params
        h = silu(conv2d(x, p["c1.w"], p["c1.b"], stride=2))  # 16x16
        h = silu(conv2d(h, p["c2.w"], p["c2.b"], stride=2))  # 8x8
        h = silu(conv2d(h, p["c3.w"], p["c3.b"], stride=2))  # 4x4
        h = h.reshape(x.shape[0], 512)
        return silu(matmul(h, p["fc.w"]) + p["fc.b"])

    def embed(self, x) -> np.ndarray:
        """Penultimate 64-dim features, no grad."""
        imgs = x.images if isinstance(x, ImageBatch) else x
        with no_grad():
            return self._trunk(imgs).data.copy()

    def logits(self, x: Tensor) -> Tensor:
        return matmul(self._trunk(x), self.params["out.w"]) + self.params["out.b"]

    def predict(self, x):
        """(labels, max-softmax confidence) per image, no grad."""
        imgs = x.images if isinstance(x, ImageBatch) else x
        with no_grad():
            z = self.logits(imgs).data
        z = z - z.max(axis=1, keepdims=True)
        prob = np.exp(z)
        prob /= prob.sum(axis=1, keepdims=True)
        return prob.argmax(axis=1), prob.max(axis=1)

    def accuracy(self, batch: ImageBatch) -> float:
        labels, _ = self.predict(batch)
        return float(np.mean(labels == np.asarray(batch.ids)))


@dataclass
class EmbedderTrainConfig:
    steps: int = 2500
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0
    holdout_frac: float = 0.2  # image-level split; every identity appears in training
    noise_aug: float = 0.05  # input jitter; also hardens confidence on generated images
    shift_aug: int = 1  # random +-pixel rolls; counters overfitting to pose


def train_embedder(images: ImageBatch, cfg: EmbedderTrainConfig):
    """Train on an image-level split covering all identities.

    Returns (model, history) where history carries train/holdout accuracy; the
    holdout here means held-out images of seen identities.
    """
    rng = Rng(cfg.seed, 11)
    labels = np.asarray(images.ids)
    n_classes = int(labels.max()) + 1
    model = EmbeddingModel.build(n_classes, rng.substream("init"))

    perm = rng.substream("split").permutation(len(images))
    n_hold = int(round(len(images) * cfg.holdout_frac))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    tr, ho = images.subset(train_idx), images.subset(hold_idx)

    opt = AdamState(lr=cfg.lr)
    brng = rng.substream("batches")
    nrng = rng.substream("noise-aug")
    y_tr = np.asarray(tr.ids)
    history = {"step": [], "loss": []}
    for step in range(cfg.steps):
        idx = brng.integers(0, len(tr), cfg.batch)
        xb = tr.images.data[idx]
        if cfg.shift_aug > 0:
            s = cfg.shift_aug
            shifts = nrng.integers(-s, s + 1, size=(len(idx), 2))
            xb = np.stack(
                [np.roll(im, (r, c), axis=(1, 2)) for im, (r, c) in zip(xb, shifts)]
            )
        if cfg.noise_aug > 0:
            xb = np.clip(xb + cfg.noise_aug * nrng.normal(xb.shape), -1.0, 1.0)
        xb = Tensor(xb)
        onehot = np.zeros((cfg.batch, n_classes), np.float32)
        onehot[np.arange(cfg.batch), y_tr[idx]] = 1.0
        zero_grads(model.params)
        logp = tlog(softmax(model.logits(xb), axis=-1) + 1e-9)
        loss = tsum(logp * Tensor(onehot)) * (-1.0 / cfg.batch)
        loss.backward()
        adam_step(model.params, GradBundle.from_params(model.params), opt)
        if step % 100 == 0:
            history["step"].append(step)
            history["loss"].append(loss.item())
    history["train_acc"] = model.accuracy(tr)
    history["holdout_acc"] = model.accuracy(ho)
    return model, history
