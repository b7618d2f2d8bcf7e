"""Evaluation: FID, identity similarity, no-reference quality, loss probes."""

from .brisque import (
    BrisqueCorpus,
    MscnField,
    brisque_features,
    brisque_score,
    fit_aggd,
    fit_brisque_corpus,
    fit_ggd,
    mscn,
    pairwise_products,
)
from .embedder import EmbedderTrainConfig, EmbeddingModel, train_embedder
from .fid import FeatureStats, FidError, fid
from .probes import (
    DEFAULT_T_GRID,
    PerturbationHistogram,
    ProbeCurve,
    diffusion_loss_probe,
    histogram_chisq_p,
    perturbation_histogram,
    probe_elevation,
)
from .similarity import IsmResult, ism

__all__ = [
    "BrisqueCorpus",
    "MscnField",
    "brisque_features",
    "brisque_score",
    "fit_aggd",
    "fit_brisque_corpus",
    "fit_ggd",
    "mscn",
    "pairwise_products",
    "EmbedderTrainConfig",
    "EmbeddingModel",
    "train_embedder",
    "FeatureStats",
    "FidError",
    "fid",
    "DEFAULT_T_GRID",
    "PerturbationHistogram",
    "ProbeCurve",
    "diffusion_loss_probe",
    "histogram_chisq_p",
    "perturbation_histogram",
    "probe_elevation",
    "IsmResult",
    "ism",
]
