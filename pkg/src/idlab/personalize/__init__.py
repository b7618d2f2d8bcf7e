"""Personalization: full fine-tuning or low-rank adapters plus a learned token."""

from .finetune import (
    LearnedToken,
    PersonalizeConfig,
    PersonalizeDiverged,
    finetune_full,
    finetune_lora_ti,
)
from .lora import AdapterSet, RankError, default_targets
from .store import load_personalization, save_personalization

__all__ = [
    "AdapterSet",
    "LearnedToken",
    "PersonalizeConfig",
    "PersonalizeDiverged",
    "RankError",
    "default_targets",
    "finetune_full",
    "finetune_lora_ti",
    "load_personalization",
    "save_personalization",
]
