"""Persisting personalization results with a mode tag."""

from __future__ import annotations

import numpy as np

from ..harness.checkpoint import load_checkpoint, save_checkpoint
from ..numerics import Tensor
from .finetune import LearnedToken
from .lora import AdapterSet

_MODES = {"full": 0.0, "lora_ti": 1.0}


def save_personalization(path, token: LearnedToken, adapters: AdapterSet | None = None) -> None:
    mode = "full" if adapters is None else "lora_ti"
    entries = {"meta/mode": np.array([_MODES[mode]], np.float32), "token/vec": token.vec.data}
    if adapters is not None:
        entries["meta/rank"] = np.array([adapters.rank], np.float32)
        entries["meta/scale"] = np.array([adapters.scale], np.float32)
        for name, t in adapters.param_dict().items():
            entries[name] = t.data
    save_checkpoint(entries, path)


def load_personalization(path) -> tuple:
    """(mode, LearnedToken, AdapterSet | None)."""
    entries = load_checkpoint(path)
    mode = {v: k for k, v in _MODES.items()}[float(entries["meta/mode"][0])]
    token = LearnedToken(Tensor(entries["token/vec"]))
    if mode == "full":
        return mode, token, None
    mats: dict = {}
    for key, arr in entries.items():
        if not key.startswith("lora."):
            continue
        name, factor = key[len("lora.") :].rsplit(".", 1)
        mats.setdefault(name, [None, None])["AB".index(factor)] = Tensor(arr)
    adapters = AdapterSet(
        rank=int(entries["meta/rank"][0]),
        scale=float(entries["meta/scale"][0]),
        mats={k: (v[0], v[1]) for k, v in mats.items()},
    )
    return mode, token, adapters
