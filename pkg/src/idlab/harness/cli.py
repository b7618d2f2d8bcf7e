"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 a requested acceptance-style check did not hold.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from ..imagewise.pgd import PgdConfig
from ..metrics.probes import diffusion_loss_probe, probe_elevation
from ..personalize.finetune import PersonalizeConfig
from ..personalize.store import save_personalization
from . import artifacts
from .artifacts import ArtifactStore
from .bench import timing_bench
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import (apply_defense, apply_postprocess, build_workspace,
                         run_condition, run_experiment, worker_count)
from .imageio import load_images, save_images
from .report import load_report, merge_reports, write_curve_csv, write_plot_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3


def _common(fn):
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="JSON experiment config; defaults are used when omitted.")
    @click.option("--seed", type=int, default=None, help="Override the first seed.")
    @click.option("--out-dir", type=click.Path(), default="runs",
                  help="Artifact cache and output directory.")
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            cfg = load_config(kwargs.pop("config_path")) if kwargs.get("config_path") \
                else ExperimentConfig()
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except FileNotFoundError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        kwargs.pop("config_path", None)
        seed = kwargs.pop("seed")
        if seed is not None:
            cfg = cfg.replace(seeds=(seed,) + tuple(cfg.seeds[1:]))
        out_dir = Path(kwargs.pop("out_dir"))
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            fn(cfg, ArtifactStore(out_dir / "cache"), out_dir, *args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except Exception as e:  # noqa: BLE001 - CLI boundary
            log.exception("command failed")
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapped


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="INFO-level logging.")
def main(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


# ------------------------------------------------------------------ dataset


@main.group()
def dataset():
    """Synthetic face corpus."""


@dataset.command("gen")
@_common
def dataset_gen(cfg, store, out_dir):
    """Render the corpus and write train/holdout image files."""
    ds = artifacts.build_dataset(cfg)
    save_images(out_dir / "train.ridc", ds.train)
    save_images(out_dir / "holdout.ridc", ds.holdout)
    click.echo(json.dumps({
        "n_ids": ds.n_ids, "per_id": ds.per_id, "res": ds.res,
        "train_ids": list(map(int, ds.train_ids)),
        "holdout_ids": list(map(int, ds.holdout_ids)),
        "train_fingerprint": artifacts.images_fingerprint(ds.train),
        "holdout_fingerprint": artifacts.images_fingerprint(ds.holdout),
    }, indent=2))


# ------------------------------------------------------------------ training


@main.command()
@_common
def pretrain(cfg, store, out_dir):
    """Pretrain (or load) the denoiser ensemble and the held-out model."""
    ds = artifacts.build_dataset(cfg)
    models, held_out = artifacts.build_ensemble(store, cfg, ds)
    for m in models + [held_out]:
        click.echo(f"width={m.arch.width} params={m.n_params} fp={m.fingerprint()}")


@main.group()
def embedder():
    """Identity embedding model."""


@embedder.command("train")
@_common
def embedder_train(cfg, store, out_dir):
    ds = artifacts.build_dataset(cfg)
    emb = artifacts.build_embedder(store, cfg, ds)
    acc = emb.accuracy(ds.all_images())
    click.echo(f"n_classes={emb.n_classes} tau={emb.tau} corpus_accuracy={acc:.3f}")


@main.group()
def pairs():
    """PGD regression pairs for the imitation term."""


@pairs.command("build")
@_common
def pairs_build(cfg, store, out_dir):
    ds = artifacts.build_dataset(cfg)
    models, _ = artifacts.build_ensemble(store, cfg, ds)
    ps = artifacts.build_pairs(store, cfg, ds, models)
    click.echo(f"pairs={len(ps)} failed={len(ps.failed)} eps={ps.eps_budget:.5f}")


@main.group()
def rid():
    """Real-time defender."""


@rid.command("train")
@_common
def rid_train(cfg, store, out_dir):
    ds = artifacts.build_dataset(cfg)
    models, _ = artifacts.build_ensemble(store, cfg, ds)
    ps = artifacts.build_pairs(store, cfg, ds, models)
    net = artifacts.build_defender(store, cfg, ds, models, ps, cfg.seeds[0])
    n = sum(v.size for v in net.params.values())
    click.echo(f"defender eps={net.eps_budget:.5f} params={n}")


# ------------------------------------------------------------------ pipeline


@main.command()
@click.option("--images", "images_path", type=click.Path(exists=True), default=None,
              help="Image file to defend; defaults to held-out reference images.")
@_common
def defend(cfg, store, out_dir, images_path):
    """Apply the configured defense and write the defended images."""
    ws = build_workspace(cfg, store)
    if images_path:
        batch = load_images(images_path)
    else:
        k = cfg.personalize.images_per_identity
        from ..diffusion.images import ImageBatch
        batch = ImageBatch.concat([ws.ds.refs_for(i, k) for i in ws.ds.holdout_ids])
    defended = apply_defense(ws, batch, cfg.seeds[0])
    out = out_dir / f"defended_{cfg.defense.kind}.ridc"
    save_images(out, defended)
    linf = float(np.abs(defended.images.data - batch.images.data).max())
    click.echo(f"wrote {out} (n={len(defended)}, linf={linf:.5f})")


@main.command()
@click.option("--identity", type=int, required=True)
@click.option("--images", "images_path", type=click.Path(exists=True), default=None,
              help="Reference images; defaults to that identity's clean refs.")
@_common
def personalize(cfg, store, out_dir, identity, images_path):
    """Fit LoRA + learned token (or full fine-tune) on reference images."""
    ws = build_workspace(cfg, store)
    refs = load_images(images_path) if images_path else \
        ws.ds.refs_for(identity, cfg.personalize.images_per_identity)
    pcfg = PersonalizeConfig(mode=cfg.personalize.mode, steps=cfg.personalize.steps,
                             lr=cfg.personalize.lr, rank=cfg.personalize.rank,
                             batch=cfg.personalize.batch, seed=cfg.seeds[0],
                             images_per_identity=cfg.personalize.images_per_identity)
    _, token, adapters = artifacts.personalize_cached(store, ws.primary, refs, pcfg)
    out = out_dir / f"personalization_id{identity}.ridc"
    save_personalization(out, token, adapters)
    click.echo(f"wrote {out} (mode={pcfg.mode}, steps={pcfg.steps})")


@main.command()
@click.option("--images", "images_path", type=click.Path(exists=True), required=True)
@_common
def postprocess(cfg, store, out_dir, images_path):
    """JPEG-like compression and/or diffusion purification per the config."""
    ws = build_workspace(cfg, store)
    batch = load_images(images_path)
    out_batch = apply_postprocess(ws, batch, cfg.seeds[0])
    out = out_dir / ("postprocessed_" + Path(images_path).name)
    save_images(out, out_batch)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--eps", "eps_list", multiple=True, type=float,
              help="Sweep values in [0,1] units; repeatable. Default: config eps.")
@click.option("--check-elevation", is_flag=True,
              help="Exit 3 unless every defended probe point sits above clean.")
@_common
def evaluate(cfg, store, out_dir, eps_list, check_elevation):
    """Full condition sweep; writes per-condition reports, a merged report, CSVs."""
    reports = run_experiment(cfg, store, eps_values=list(eps_list) or None,
                             workers=worker_count())
    paths = []
    for rep in reports:
        p = out_dir / f"report_{rep.condition}_eps{rep.eps:g}_seed{rep.seed}.json"
        rep.save(p)
        paths.append(p)
    merged = out_dir / "report_merged.json"
    merge_reports(paths, merged)
    write_plot_csv(reports, out_dir / "headline.csv")
    write_curve_csv(reports, out_dir / "probe_curves.csv")
    click.echo(f"wrote {len(paths)} report(s), {merged}, headline.csv, probe_curves.csv")
    if check_elevation:
        bad = [r.condition for r in reports
               if r.partial or not all(d > c for d, c in zip(r.probe_defended, r.probe_clean))]
        if bad:
            click.echo(f"elevation check failed for: {sorted(set(bad))}", err=True)
            sys.exit(EXIT_CHECK)


@main.command()
@click.option("--min-speedup", type=float, default=None,
              help="Exit 3 unless PGD-time / defender-time meets this ratio.")
@_common
def bench(cfg, store, out_dir, min_speedup):
    """Median per-image timing: defender forward vs full PGD budget."""
    ws = build_workspace(cfg, store)
    ps = artifacts.build_pairs(store, cfg, ws.ds, ws.models)
    net = artifacts.build_defender(store, cfg, ws.ds, ws.models, ps, cfg.seeds[0])
    batch = ws.ds.refs_for(ws.ds.holdout_ids[0], cfg.personalize.images_per_identity)
    pgd_cfg = PgdConfig(eps_budget=cfg.defense.eps_internal, steps=cfg.defense.pgd_steps)
    res = timing_bench(net, ws.models[:1], batch, pgd_cfg=pgd_cfg, sched=ws.sched)
    doc = {"rid_per_image_s": res.rid_per_image_s, "pgd_per_image_s": res.pgd_per_image_s,
           "speedup": res.speedup, "op_counts": res.op_counts,
           "trace_input_independent": res.trace_input_independent}
    (out_dir / "bench.json").write_text(json.dumps(doc, indent=2))
    click.echo(json.dumps(doc, indent=2))
    if min_speedup is not None and (res.speedup < min_speedup
                                    or not res.trace_input_independent):
        sys.exit(EXIT_CHECK)


@main.group()
def report():
    """Report files."""


@report.command("merge")
@click.argument("inputs", nargs=-1, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default="report_merged.json")
def report_merge(inputs, out_path):
    if not inputs:
        click.echo("nothing to merge", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        merged = merge_reports(inputs, out_path)
    except Exception as e:  # noqa: BLE001
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"merged {len(merged['conditions'])} condition(s) into {out_path}")


if __name__ == "__main__":
    main()
