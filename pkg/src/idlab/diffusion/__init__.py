"""Noise schedules, forward process, diffusion loss, toy denoisers, sampling."""

from .denoiser import Denoiser, DenoiserArch
from .images import ImageBatch
from .sampling import sample
from .schedule import NoiseSchedule, ScheduleError, cosine_schedule, validate_schedule
from .training import (
    NULL_COND,
    PretrainConfig,
    PretrainDiverged,
    cond_of,
    diffusion_loss,
    diffusion_loss_value,
    forward_diffuse,
    pretrain,
)

__all__ = [
    "Denoiser",
    "DenoiserArch",
    "ImageBatch",
    "sample",
    "NoiseSchedule",
    "ScheduleError",
    "cosine_schedule",
    "validate_schedule",
    "NULL_COND",
    "PretrainConfig",
    "PretrainDiverged",
    "cond_of",
    "diffusion_loss",
    "diffusion_loss_value",
    "forward_diffuse",
    "pretrain",
]
