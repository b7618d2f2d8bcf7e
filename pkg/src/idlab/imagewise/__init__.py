"""Per-image PGD defenses, Gaussian baselines, and regression-pair stores."""

from .pairs import PairStore, build_regression_pairs
from .perturbation import Perturbation
from .pgd import PgdConfig, gaussian_baseline, pgd_defend

__all__ = [
    "PairStore",
    "build_regression_pairs",
    "Perturbation",
    "PgdConfig",
    "gaussian_baseline",
    "pgd_defend",
]
