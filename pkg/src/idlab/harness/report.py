"""Metric reports: versioned JSON documents plus CSV plot data.

A report captures one evaluated condition (defense x eps x postprocess x
seed). Merging collects many conditions into a single document keyed by
condition label so downstream plotting never has to re-run experiments.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1


class ReportError(ValueError):
    pass


def _check_finite(obj, where: str):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{where}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise ReportError(f"non-finite value at {where}: {obj}")


@dataclass
class MetricReport:
    condition: str
    eps: float
    seed: int
    config_fingerprint: str
    fid: float = float("nan")
    ism: float = float("nan")
    detect_rate: float = float("nan")
    aism: float = float("nan")
    ism_clean: float = float("nan")
    detect_rate_clean: float = float("nan")
    aism_clean: float = float("nan")
    brisque_mean: float = float("nan")
    brisque_std: float = float("nan")
    probe_t: list = field(default_factory=list)
    probe_clean: list = field(default_factory=list)
    probe_defended: list = field(default_factory=list)
    refs_loss_clean: float = float("nan")
    refs_loss_defended: float = float("nan")
    runtime_s: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    partial: bool = False  # set when a stage failed and metrics are incomplete
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        d = self.to_dict()
        if not self.partial:
            _check_finite(d, self.condition)
        return self

    def save(self, path):
        self.validate()
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def load_report(path) -> MetricReport:
    data = json.loads(Path(path).read_text())
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ReportError(f"{path}: schema version {version} != {SCHEMA_VERSION}")
    return MetricReport(**data)


def merge_reports(paths, out_path):
    """Collect per-condition reports into one document; returns the dict."""
    merged = {"schema_version": SCHEMA_VERSION, "conditions": {}}
    for p in sorted(str(x) for x in paths):
        rep = load_report(p)
        key = f"{rep.condition}/eps={rep.eps:g}/seed={rep.seed}"
        if key in merged["conditions"]:
            raise ReportError(f"duplicate condition {key} from {p}")
        merged["conditions"][key] = rep.to_dict()
    Path(out_path).write_text(json.dumps(merged, indent=2, sort_keys=True))
    return merged


def write_plot_csv(reports, out_path):
    """Flat CSV of headline numbers, one row per report, for plotting."""
    cols = ["condition", "eps", "seed", "fid", "ism", "detect_rate", "aism",
            "brisque_mean", "probe_mean_elevation"]
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rep in reports:
            elev = float("nan")
            if rep.probe_defended and rep.probe_clean:
                diffs = [d - c for d, c in zip(rep.probe_defended, rep.probe_clean)]
                elev = sum(diffs) / len(diffs)
            w.writerow([rep.condition, rep.eps, rep.seed, rep.fid, rep.ism,
                        rep.detect_rate, rep.aism, rep.brisque_mean, elev])


def write_curve_csv(reports, out_path):
    """Long-form probe curves (one row per grid point) for line plots."""
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "eps", "seed", "t", "clean", "defended"])
        for rep in reports:
            for t, c, d in zip(rep.probe_t, rep.probe_clean, rep.probe_defended):
                w.writerow([rep.condition, rep.eps, rep.seed, t, c, d])
