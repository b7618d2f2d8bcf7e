"""End-to-end experiment runner: defend -> postprocess -> personalize -> evaluate.

A condition is (defense kind, eps, postprocess, seed). Clean and defended
arms share every random draw that admits pairing — personalization batches,
refs-loss noise, sampler starting noise, probe noise — so deltas between the
arms reflect the defense, not seed luck.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from ..diffusion.images import ImageBatch
from ..diffusion.sampling import sample
from ..diffusion.schedule import cosine_schedule
from ..diffusion.training import diffusion_loss_value
from ..imagewise.pgd import PgdConfig, gaussian_baseline, pgd_defend
from ..metrics.brisque import brisque_score, fit_brisque_corpus
from ..metrics.fid import FeatureStats, fid
from ..metrics.probes import diffusion_loss_probe
from ..metrics.similarity import ism
from ..numerics.rng import Rng
from ..personalize.finetune import PersonalizeConfig
from ..postprocess.diffpure import DiffpureConfig, diffpure
from ..postprocess.jpeg import JpegConfig, jpeg_like
from ..rid.losses import defend
from . import artifacts
from .artifacts import ArtifactStore
from .config import ExperimentConfig, MetricSpec
from .report import MetricReport

log = logging.getLogger(__name__)

_REFS_LOSS_MC = 8


def sample_personalized(model, sched, identity: int, seed: int, mspec: MetricSpec,
                        token=None, adapters=None) -> ImageBatch:
    """Token-conditioned sampling; the rng key ignores the arm so clean and
    defended personalizations start from identical noise."""
    rng = Rng(seed, 43).substream(f"sample/{identity}")
    return sample(model, sched, rng, mspec.samples_per_identity, mspec.sample_steps,
                  token=token, adapters=adapters)


def worker_count() -> int:
    """Parallel condition workers; IDLAB_WORKERS overrides the default of 1."""
    raw = os.environ.get("IDLAB_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring malformed IDLAB_WORKERS=%r", raw)
        return 1


@dataclass
class Workspace:
    """Shared, defense-independent artifacts for one experiment config."""

    cfg: ExperimentConfig
    store: ArtifactStore
    ds: object
    models: list
    held_out: object
    embedder: object
    brisque_corpus: object
    sched: object

    @property
    def primary(self):
        return self.models[0]


def build_workspace(cfg: ExperimentConfig, store: ArtifactStore) -> Workspace:
    ds = artifacts.build_dataset(cfg)
    models, held_out = artifacts.build_ensemble(store, cfg, ds)
    embedder = artifacts.build_embedder(store, cfg, ds)
    corpus = fit_brisque_corpus(ds.all_images())
    return Workspace(cfg, store, ds, models, held_out, embedder, corpus, cosine_schedule())


def apply_defense(ws: Workspace, refs: ImageBatch, seed: int) -> ImageBatch:
    """Dispatch on cfg.defense.kind; returns defended copies of `refs`."""
    d = ws.cfg.defense
    kind = d.kind
    if kind == "none":
        return refs
    if kind in ("rid", "rid_advsds_only", "rid_reg_only"):
        variant = {"rid": "combined", "rid_advsds_only": "advsds_only",
                   "rid_reg_only": "reg_only"}[kind]
        pairs = None
        if variant != "advsds_only":
            pairs = artifacts.build_pairs(ws.store, ws.cfg, ws.ds, ws.models)
        net = artifacts.build_defender(ws.store, ws.cfg, ws.ds, ws.models, pairs,
                                       seed, variant=variant)
        _, defended = defend(net, refs)
        return defended
    rng = Rng(seed, 37).substream(f"defense/{artifacts.images_fingerprint(refs)}")
    if kind == "gaussian":
        pert = gaussian_baseline(refs, d.eps_internal, "small", rng)
        return pert.materialize(refs)
    pcfg = PgdConfig(eps_budget=d.eps_internal, steps=d.pgd_steps, mode=kind)
    target = ws.models if kind == "advdm" else ws.models[:1]
    return pgd_defend(refs, target, pcfg, rng, ws.sched).materialize(refs)


def apply_postprocess(ws: Workspace, images: ImageBatch, seed: int) -> ImageBatch:
    p = ws.cfg.postprocess
    out = images
    if p.jpeg_q is not None:
        out = jpeg_like(out, JpegConfig(quality=p.jpeg_q))
    if p.diffpure_t is not None:
        rng = Rng(seed, 47).substream("diffpure")
        out = diffpure(out, DiffpureConfig(ws.primary, t_star=p.diffpure_t), rng, ws.sched)
    return out


def _personalize_and_eval(ws: Workspace, identity: int, refs: ImageBatch, seed: int):
    """(refs_loss, IsmResult, per-identity FID) for one personalization arm.

    FID reference = the identity's clean images (recorded convention); ISM
    reference = the identity's clean refs.
    """
    cfg = ws.cfg
    pcfg = PersonalizeConfig(mode=cfg.personalize.mode, steps=cfg.personalize.steps,
                             lr=cfg.personalize.lr, rank=cfg.personalize.rank,
                             batch=cfg.personalize.batch, seed=seed,
                             images_per_identity=cfg.personalize.images_per_identity)
    model, token, adapters = artifacts.personalize_cached(ws.store, ws.primary, refs, pcfg)
    loss_rng = Rng(seed, 41).substream(f"refsloss/{identity}")
    refs_loss = diffusion_loss_value(model, refs, loss_rng, ws.sched, n_mc=_REFS_LOSS_MC,
                                     token=token.vec, adapters=adapters)
    gen = sample_personalized(model, ws.sched, identity, seed, cfg.metrics,
                              token=token.vec, adapters=adapters)
    clean_refs = ws.ds.refs_for(identity, cfg.personalize.images_per_identity)
    sim = ism(gen, clean_refs, ws.embedder)
    id_fid = fid(FeatureStats.from_features(ws.embedder.embed(gen)),
                 FeatureStats.from_features(ws.embedder.embed(ws.ds.images_of(identity))))
    return refs_loss, sim, id_fid


def run_condition(ws: Workspace, seed: int) -> MetricReport:
    """Evaluate one (defense, eps, postprocess) condition on held-out identities."""
    cfg = ws.cfg
    rep = MetricReport(condition=_condition_label(cfg), eps=cfg.defense.eps, seed=seed,
                       config_fingerprint=cfg.fingerprint())
    k = cfg.personalize.images_per_identity
    eval_ids = list(ws.ds.holdout_ids)
    runtimes: dict = {}

    t0 = time.perf_counter()
    clean_by_id, def_by_id = {}, {}
    try:
        for identity in eval_ids:
            refs = ws.ds.refs_for(identity, k)
            clean_by_id[identity] = refs
            def_by_id[identity] = apply_defense(ws, refs, seed)
        runtimes["defend_s"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        for identity in eval_ids:
            def_by_id[identity] = apply_postprocess(ws, def_by_id[identity], seed)
        runtimes["postprocess_s"] = time.perf_counter() - t0
    except Exception as e:  # noqa: BLE001 - partial reports must survive stage failures
        log.exception("defense stage failed")
        rep.partial = True
        rep.notes.append(f"defense stage failed: {e}")
        rep.runtime_s = runtimes
        return rep

    clean_all = ImageBatch.concat([clean_by_id[i] for i in eval_ids])
    def_all = ImageBatch.concat([def_by_id[i] for i in eval_ids])

    t0 = time.perf_counter()
    probe_clean = diffusion_loss_probe(ws.primary, clean_all, seed=seed,
                                       n_rep=cfg.metrics.probe_reps, sched=ws.sched)
    probe_def = diffusion_loss_probe(ws.primary, def_all, seed=seed,
                                     n_rep=cfg.metrics.probe_reps, sched=ws.sched)
    rep.probe_t = [float(t) for t in probe_clean.t_grid]
    rep.probe_clean = [float(v) for v in probe_clean.values]
    rep.probe_defended = [float(v) for v in probe_def.values]
    runtimes["probes_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scores = [brisque_score(def_all.images.data[i], ws.brisque_corpus)
              for i in range(len(def_all))]
    rep.brisque_mean = float(np.mean(scores))
    rep.brisque_std = float(np.std(scores))
    runtimes["image_metrics_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    losses_c, losses_d, sims_c, sims_d, fids_d = [], [], [], [], []
    try:
        for identity in eval_ids:
            loss_c, sim_c, _ = _personalize_and_eval(ws, identity, clean_by_id[identity], seed)
            loss_d, sim_d, fid_d = _personalize_and_eval(ws, identity, def_by_id[identity], seed)
            losses_c.append(loss_c)
            losses_d.append(loss_d)
            sims_c.append(sim_c)
            sims_d.append(sim_d)
            fids_d.append(fid_d)
    except Exception as e:  # noqa: BLE001
        log.exception("personalization stage failed")
        rep.partial = True
        rep.notes.append(f"personalization stage failed: {e}")
        rep.runtime_s = runtimes
        return rep
    runtimes["personalize_s"] = time.perf_counter() - t0

    rep.fid = float(np.mean(fids_d))
    rep.refs_loss_clean = float(np.mean(losses_c))
    rep.refs_loss_defended = float(np.mean(losses_d))
    rep.ism = float(np.mean([s.ism if s.ism is not None else 0.0 for s in sims_d]))
    rep.detect_rate = float(np.mean([s.dr for s in sims_d]))
    rep.aism = float(np.mean([s.aism for s in sims_d]))
    rep.ism_clean = float(np.mean([s.ism if s.ism is not None else 0.0 for s in sims_c]))
    rep.detect_rate_clean = float(np.mean([s.dr for s in sims_c]))
    rep.aism_clean = float(np.mean([s.aism for s in sims_c]))
    rep.runtime_s = runtimes
    return rep.validate()


def _condition_label(cfg: ExperimentConfig) -> str:
    parts = [cfg.defense.kind]
    p = cfg.postprocess
    if p.jpeg_q is not None:
        parts.append(f"jpeg{p.jpeg_q}")
    if p.diffpure_t is not None:
        parts.append(f"diffpure{p.diffpure_t:g}")
    return "+".join(parts)


def _run_condition_worker(args):
    cfg_dict, store_root, eps, seed = args
    from .config import config_from_dict

    cfg = config_from_dict(cfg_dict)
    cfg = cfg.replace(defense=replace(cfg.defense, eps=eps))
    ws = build_workspace(cfg, ArtifactStore(store_root))
    return run_condition(ws, seed)


def run_experiment(cfg: ExperimentConfig, store: ArtifactStore,
                   eps_values=None, workers: int | None = None) -> list:
    """Sweep eps x seeds for one defense/postprocess setting; list of reports.

    Shared artifacts are built (and cached) up front; with workers > 1 the
    conditions then run in separate processes against the warm cache.
    """
    eps_values = list(eps_values) if eps_values is not None else [cfg.defense.eps]
    workers = worker_count() if workers is None else max(1, workers)
    ws = build_workspace(cfg, store)  # trains/loads everything shared

    jobs = [(eps, seed) for eps in eps_values for seed in cfg.seeds]
    if workers <= 1 or len(jobs) <= 1:
        reports = []
        for eps, seed in jobs:
            cond = cfg.replace(defense=replace(cfg.defense, eps=eps))
            reports.append(run_condition(Workspace(cond, ws.store, ws.ds, ws.models,
                                                   ws.held_out, ws.embedder,
                                                   ws.brisque_corpus, ws.sched), seed))
        return reports

    import concurrent.futures as cf
    import multiprocessing as mp

    args = [(cfg.to_dict(), str(store.root), eps, seed) for eps, seed in jobs]
    with cf.ProcessPoolExecutor(max_workers=workers,
                                mp_context=mp.get_context("fork")) as pool:
        return list(pool.map(_run_condition_worker, args))
