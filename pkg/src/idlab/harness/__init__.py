"""Dataset synthesis, configuration, persistence, orchestration, CLI.

The orchestration layers (artifacts, experiment, bench) import model modules
that themselves use the checkpoint container here, so those names load
lazily to keep the package import-order-free.
"""

from .checkpoint import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    VersionMismatchError,
    load_checkpoint,
    params_fingerprint,
    save_checkpoint,
)
from .config import (
    ConfigError,
    DatasetSpec,
    DefenseSpec,
    ExperimentConfig,
    MetricSpec,
    ModelSpec,
    PersonalizeSpec,
    PostprocessSpec,
    config_from_dict,
    load_config,
)
from .report import (
    SCHEMA_VERSION,
    MetricReport,
    ReportError,
    load_report,
    merge_reports,
    write_curve_csv,
    write_plot_csv,
)
from .synth import FaceDataset, IdentityParams, draw_identities, render_face, synth_dataset

_LAZY = {
    "ArtifactStore": "artifacts",
    "build_dataset": "artifacts",
    "build_defender": "artifacts",
    "build_embedder": "artifacts",
    "build_ensemble": "artifacts",
    "build_pairs": "artifacts",
    "images_fingerprint": "artifacts",
    "personalize_cached": "artifacts",
    "BenchResult": "bench",
    "timing_bench": "bench",
    "Workspace": "experiment",
    "apply_defense": "experiment",
    "apply_postprocess": "experiment",
    "build_workspace": "experiment",
    "run_condition": "experiment",
    "run_experiment": "experiment",
    "sample_personalized": "experiment",
    "worker_count": "experiment",
    "load_images": "imageio",
    "save_images": "imageio",
}


def __getattr__(name):
    if name in _LAZY:
        import importlib

        mod = importlib.import_module(f".{_LAZY[name]}", __name__)
        return getattr(mod, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = sorted([
    "BadMagicError",
    "CheckpointError",
    "ChecksumError",
    "ConfigError",
    "DatasetSpec",
    "DefenseSpec",
    "ExperimentConfig",
    "FaceDataset",
    "IdentityParams",
    "MetricReport",
    "MetricSpec",
    "ModelSpec",
    "PersonalizeSpec",
    "PostprocessSpec",
    "ReportError",
    "SCHEMA_VERSION",
    "VersionMismatchError",
    "config_from_dict",
    "draw_identities",
    "load_checkpoint",
    "load_config",
    "load_report",
    "merge_reports",
    "params_fingerprint",
    "render_face",
    "save_checkpoint",
    "synth_dataset",
    "write_curve_csv",
    "write_plot_csv",
    *_LAZY,
])
