"""Synthetic identity portraits.

Each identity is a parameter vector (face ellipse, eyes, mouth, texture,
brightness); rendering is a pure function of (identity params, pose jitter),
so datasets are bit-reproducible from their seed. Identities are drawn on
coarse parameter grids and re-drawn until every pair differs in enough
quantized parameters to stay separable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffusion.images import ImageBatch
from ..numerics import Rng, Tensor

# quantized draw grids: (low, high, levels) per parameter
_GRIDS = {
    "cx": (-2.0, 2.0, 5),
    "cy": (-2.0, 2.0, 5),
    "ax": (14.0, 20.0, 5),
    "ay": (16.0, 22.0, 5),
    "eye_dx": (3.5, 6.5, 4),
    "eye_dy": (2.0, 5.0, 4),
    "eye_r": (1.0, 2.4, 4),
    "mouth_y": (4.0, 7.0, 4),
    "mouth_w": (3.0, 6.0, 4),
    "mouth_curve": (-0.25, 0.25, 5),
    "brightness": (0.30, 0.65, 5),
    "bg_gap": (0.14, 0.30, 5),  # backdrop sits this far below skin tone
    "tex_fx": (1.0, 1.5, 5),
    "tex_fy": (1.0, 1.5, 5),
    "tex_amp": (0.08, 0.18, 4),
}


@dataclass(frozen=True)
class IdentityParams:
    cx: float
    cy: float
    ax: float
    ay: float
    eye_dx: float
    eye_dy: float
    eye_r: float
    mouth_y: float
    mouth_w: float
    mouth_curve: float
    brightness: float
    bg_gap: float
    tex_fx: float
    tex_fy: float
    tex_amp: float
    tex_phase: float  # free (not part of the distinctness count)
    levels: tuple = field(default=(), compare=False)


def _draw_identity(rng: Rng) -> IdentityParams:
    vals, levels = {}, []
    for name, (lo, hi, n) in _GRIDS.items():
        k = int(rng.integers(0, n))
        levels.append(k)
        vals[name] = lo + (hi - lo) * k / (n - 1)
    vals["tex_phase"] = float(rng.uniform((), 0.0, 2.0 * np.pi))
    return IdentityParams(**vals, levels=tuple(levels))


def draw_identities(n_ids: int, rng: Rng, min_diff: int = 3) -> list:
    """Rejection-sample until all pairs differ in >= min_diff grid levels."""
    out: list[IdentityParams] = []
    guard = 0
    while len(out) < n_ids:
        guard += 1
        if guard > 100 * n_ids:
            raise RuntimeError("identity sampling failed to satisfy distinctness")
        cand = _draw_identity(rng)
        if all(sum(a != b for a, b in zip(cand.levels, p.levels)) >= min_diff for p in out):
            out.append(cand)
    return out


_FEATHER = 1.4  # edge transition width in pixels; keeps block-DCT spectra photo-like


def _soft_in(signed_dist: np.ndarray, width: float = _FEATHER) -> np.ndarray:
    """1 well inside (signed distance < 0), 0 outside, smooth ramp between."""
    return np.clip(0.5 - signed_dist / width, 0.0, 1.0)


def render_face(p: IdentityParams, res: int = 32, jitter: tuple = (0.0, 0.0, 1.0, 0.0)) -> np.ndarray:
    """One portrait in [-1, 1]; jitter = (dx, dy, scale, brightness shift).

    Every feature is blended through a feathered mask — hard pixel steps
    would give the corpus an unnaturally heavy high-frequency spectrum.
    """
    dx, dy, s, db = jitter
    y, x = np.mgrid[0:res, 0:res].astype(np.float64)
    cx = res / 2 + p.cx + dx
    cy = res / 2 + p.cy + dy
    xs, ys = (x - cx) / s, (y - cy) / s

    tone = p.brightness + db
    img = np.full((res, res), tone - p.bg_gap)  # studio backdrop near skin tone
    face = np.sqrt((xs / p.ax) ** 2 + (ys / p.ay) ** 2)
    rim = _soft_in((face - 1.0) * min(p.ax, p.ay), 2.2)  # distance scaled back to ~pixels
    tex = p.tex_amp * np.cos(2 * np.pi * (p.tex_fx * xs + p.tex_fy * ys) / res * 8 + p.tex_phase)
    img = img * (1 - rim) + rim * (tone + tex)

    def blend(mask, value):
        return img * (1 - mask) + mask * value

    # feature contrast stays photo-like: strong enough to classify, small
    # enough that an 8x8 DCT block looks like natural image statistics
    for sx in (-1.0, 1.0):
        eye = np.sqrt((xs - sx * p.eye_dx) ** 2 + (ys + p.eye_dy) ** 2)
        img = blend(_soft_in(eye - p.eye_r), tone - 0.30)
    band = _soft_in(np.abs(ys - p.mouth_y - p.mouth_curve * xs**2) - 0.7)
    extent = _soft_in(np.abs(xs) - p.mouth_w)
    img = blend(band * extent, tone - 0.25)
    nose = _soft_in(np.abs(xs) - 0.6) * _soft_in(ys - 2.0) * _soft_in(-1.0 - ys)
    img = blend(nose, tone - 0.10)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


@dataclass
class FaceDataset:
    train: ImageBatch
    holdout: ImageBatch
    identities: list
    train_ids: list
    holdout_ids: list
    per_id: int
    res: int
    seed: int

    @property
    def n_ids(self) -> int:
        return len(self.identities)

    def all_images(self) -> ImageBatch:
        return ImageBatch.concat([self.train, self.holdout])

    def images_of(self, identity: int) -> ImageBatch:
        src = self.train if identity in set(self.train_ids) else self.holdout
        idx = [i for i, lab in enumerate(src.ids) if lab == identity]
        return src.subset(idx)

    def refs_for(self, identity: int, k: int = 12) -> ImageBatch:
        imgs = self.images_of(identity)
        if len(imgs) < k:
            raise ValueError(f"identity {identity} has only {len(imgs)} images, need {k}")
        return imgs.subset(np.arange(k))


def synth_dataset(
    n_ids: int,
    per_id: int,
    res: int = 32,
    seed: int = 0,
    holdout_frac: float = 3.0 / 7.0,
    min_diff: int = 5,
) -> FaceDataset:
    """Deterministic face corpus with a disjoint train/holdout identity split."""
    if n_ids < 2:
        raise ValueError("need at least 2 identities")
    if per_id < 15:
        raise ValueError("need at least 15 images per identity")
    rng = Rng(seed, 7)
    idents = draw_identities(n_ids, rng.substream("identities"), min_diff)
    jit = rng.substream("pose")

    stacks, labels = [], []
    for i, p in enumerate(idents):
        for _ in range(per_id):
            jitter = (
                float(jit.uniform((), -1.5, 1.5)),
                float(jit.uniform((), -1.5, 1.5)),
                float(jit.uniform((), 0.94, 1.06)),
                float(jit.uniform((), -0.04, 0.04)),
            )
            stacks.append(render_face(p, res, jitter))
            labels.append(i)
    images = np.stack(stacks)[:, None, :, :]

    n_hold = max(1, int(round(n_ids * holdout_frac)))
    hold_ids = list(range(n_ids - n_hold, n_ids))
    train_ids = list(range(n_ids - n_hold))
    labels = np.asarray(labels)
    tr = np.isin(labels, train_ids)
    return FaceDataset(
        train=ImageBatch(Tensor(images[tr]), labels[tr].tolist()),
        holdout=ImageBatch(Tensor(images[~tr]), labels[~tr].tolist()),
        identities=idents,
        train_ids=train_ids,
        holdout_ids=hold_ids,
        per_id=per_id,
        res=res,
        seed=seed,
    )
