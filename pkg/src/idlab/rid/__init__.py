"""Feed-forward defender: network, surrogate losses, training."""

from .losses import (
    advsds_grad_reference,
    defend,
    denoiser_input_vjp,
    full_grad_reference,
    jacobian_term_reference,
    reg_loss,
    reg_term,
    sur_adv_sds_loss,
    sur_adv_sds_term,
)
from .net import BOUND_SHRINK, DefenderArch, DefenderNet
from .training import RidDiverged, RidTrainConfig, train_rid

__all__ = [
    "BOUND_SHRINK",
    "DefenderArch",
    "DefenderNet",
    "RidDiverged",
    "RidTrainConfig",
    "advsds_grad_reference",
    "defend",
    "denoiser_input_vjp",
    "full_grad_reference",
    "jacobian_term_reference",
    "reg_loss",
    "reg_term",
    "sur_adv_sds_loss",
    "sur_adv_sds_term",
    "train_rid",
]
