"""Experiment configuration: strict schema over plain dicts/JSON.

Every section is a frozen dataclass; `from_dict` rejects unknown keys so a
typo in a config file fails loudly before any compute starts. The
fingerprint hashes the canonical JSON form and is embedded in every report.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        sub = _SECTIONS.get(f.type if isinstance(f.type, str) else getattr(f.type, "__name__", ""))
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


@dataclass(frozen=True)
class DatasetSpec:
    n_ids: int = 35
    per_id: int = 15
    res: int = 32
    seed: int = 0
    holdout_frac: float = 3.0 / 7.0

    def __post_init__(self):
        if self.n_ids < 2:
            raise ValueError("n_ids must be >= 2")
        if self.per_id < 15:
            raise ValueError("per_id must be >= 15")


@dataclass(frozen=True)
class ModelSpec:
    widths: tuple = (32, 28, 24)  # ensemble members differ in seed and width
    held_out_width: int = 36  # black-box stand-in, never trained against
    pretrain_steps: int = 9000
    pretrain_batch: int = 10
    pretrain_lr: float = 3e-4
    t_bias: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if len(self.widths) < 1:
            raise ValueError("need at least one ensemble width")


_DEFENSE_KINDS = ("rid", "rid_advsds_only", "rid_reg_only", "advdm", "antidb",
                  "gaussian", "none")


@dataclass(frozen=True)
class DefenseSpec:
    kind: str = "rid"
    eps: float = 8.0 / 255.0  # stated in [0,1] pixel units; doubled internally
    rid_steps: int = 600
    rid_lr: float = 1e-4
    lambda_reg: float = 3.0
    pair_fraction: float = 0.1
    pgd_steps: int = 50

    def __post_init__(self):
        if self.kind not in _DEFENSE_KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must be in (0, 0.5) [0,1]-units")

    @property
    def eps_internal(self) -> float:
        return 2.0 * self.eps  # [-1,1] convention


@dataclass(frozen=True)
class PersonalizeSpec:
    mode: str = "lora_ti"
    steps: int = 250
    rank: int = 4
    batch: int = 4
    images_per_identity: int = 12
    lr: float | None = None


@dataclass(frozen=True)
class PostprocessSpec:
    jpeg_q: int | None = None
    diffpure_t: float | None = None


@dataclass(frozen=True)
class MetricSpec:
    tau: float = 0.5
    probe_reps: int = 2
    sample_steps: int = 25
    samples_per_identity: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    models: ModelSpec = field(default_factory=ModelSpec)
    defense: DefenseSpec = field(default_factory=DefenseSpec)
    personalize: PersonalizeSpec = field(default_factory=PersonalizeSpec)
    postprocess: PostprocessSpec = field(default_factory=PostprocessSpec)
    metrics: MetricSpec = field(default_factory=MetricSpec)
    seeds: tuple = (0,)
    label: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.blake2b(blob.encode(), digest_size=8).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


_SECTIONS = {
    "DatasetSpec": DatasetSpec,
    "ModelSpec": ModelSpec,
    "DefenseSpec": DefenseSpec,
    "PersonalizeSpec": PersonalizeSpec,
    "PostprocessSpec": PostprocessSpec,
    "MetricSpec": MetricSpec,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(data)
