import json
import subprocess
import sys

import numpy as np
import pytest

from idlab.diffusion.images import ImageBatch
from idlab.harness.checkpoint import (BadMagicError, ChecksumError,
                                      VersionMismatchError, load_checkpoint,
                                      params_fingerprint, save_checkpoint)
from idlab.harness.config import (ConfigError, ExperimentConfig,
                                  config_from_dict, load_config)
from idlab.harness.imageio import load_images, save_images
from idlab.harness.report import (MetricReport, ReportError, load_report,
                                  merge_reports, write_curve_csv, write_plot_csv)
from idlab.harness.synth import draw_identities, render_face, synth_dataset
from idlab.numerics import Rng, Tensor


# ---------------------------------------------------------------- dataset


def test_dataset_counts_and_split():
    ds = synth_dataset(14, 15, seed=3)
    assert ds.n_ids == 14
    n_hold = round(14 * 3.0 / 7.0)
    assert len(set(ds.holdout_ids)) == n_hold
    assert set(ds.train_ids).isdisjoint(ds.holdout_ids)
    assert len(ds.train) == (14 - n_hold) * 15
    assert len(ds.holdout) == n_hold * 15
    assert ds.train.images.data.dtype == np.float32
    assert (np.abs(ds.train.images.data) <= 1.0 + 1e-8).all()


def test_dataset_bit_identical_rebuild():
    a = synth_dataset(8, 15, seed=11)
    b = synth_dataset(8, 15, seed=11)
    assert np.array_equal(a.train.images.data, b.train.images.data)
    assert np.array_equal(a.holdout.images.data, b.holdout.images.data)
    c = synth_dataset(8, 15, seed=12)
    assert not np.array_equal(a.train.images.data, c.train.images.data)


def test_identities_distinct():
    idents = draw_identities(20, Rng(0, 7).substream("identities"), 5)
    faces = [render_face(p) for p in idents]
    for i in range(len(faces)):
        for j in range(i + 1, len(faces)):
            assert np.abs(faces[i] - faces[j]).max() > 0.05


def test_refs_for_requires_enough_images():
    ds = synth_dataset(4, 15, seed=0)
    with pytest.raises(ValueError):
        ds.refs_for(ds.holdout_ids[0], 16)


def test_dataset_rejects_tiny_corpus():
    with pytest.raises(ValueError):
        synth_dataset(1, 15)
    with pytest.raises(ValueError):
        synth_dataset(4, 10)


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys_at_all_levels():
    with pytest.raises(ConfigError):
        config_from_dict({"nope": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": {"n_idz": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"defense": {"kind": "rid", "epz": 0.1}})


def test_config_roundtrip_and_fingerprint():
    cfg = ExperimentConfig()
    again = config_from_dict(cfg.to_dict())
    assert again.fingerprint() == cfg.fingerprint()
    bumped = config_from_dict({"defense": {"eps": 12 / 255}})
    assert bumped.fingerprint() != cfg.fingerprint()
    assert bumped.defense.eps_internal == pytest.approx(24 / 255)


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"defense": {"kind": "sorcery"}})
    with pytest.raises(ConfigError):
        config_from_dict({"defense": {"eps": 0.9}})
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": {"per_id": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"seeds": []})


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


# ---------------------------------------------------------------- checkpoint


def _entries():
    return {"a/w": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array([1.5], dtype=np.float32)}


def test_checkpoint_roundtrip(tmp_path):
    p = tmp_path / "c.ridc"
    save_checkpoint(_entries(), p)
    out = load_checkpoint(p)
    assert set(out) == {"a/w", "b"}
    assert np.array_equal(out["a/w"], _entries()["a/w"])
    assert out["a/w"].dtype == np.float32


def test_checkpoint_empty_and_corruption(tmp_path):
    p = tmp_path / "e.ridc"
    save_checkpoint({}, p)
    assert load_checkpoint(p) == {}

    p2 = tmp_path / "x.ridc"
    save_checkpoint(_entries(), p2)
    raw = bytearray(p2.read_bytes())
    raw[-6] ^= 0xFF  # flip a payload bit under the CRC
    p2.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_checkpoint(p2)

    p3 = tmp_path / "m.ridc"
    p3.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(BadMagicError):
        load_checkpoint(p3)

    p4 = tmp_path / "v.ridc"
    save_checkpoint(_entries(), p4)
    raw = bytearray(p4.read_bytes())
    raw[8] ^= 0x7F  # version field follows the magic
    p4.write_bytes(bytes(raw))
    with pytest.raises((VersionMismatchError, ChecksumError)):
        load_checkpoint(p4)


def test_params_fingerprint_orders_and_distinguishes():
    a = {"x": Tensor(np.ones(3, np.float32)), "y": Tensor(np.zeros(2, np.float32))}
    b = dict(reversed(list(a.items())))
    assert params_fingerprint(a) == params_fingerprint(b)
    c = {"x": Tensor(np.ones(3, np.float32)), "y": Tensor(np.ones(2, np.float32))}
    assert params_fingerprint(a) != params_fingerprint(c)


def test_imageio_roundtrip(tmp_path):
    batch = ImageBatch(Tensor(np.linspace(-1, 1, 2 * 16).astype(np.float32).reshape(2, 1, 4, 4)),
                       [3, 9])
    p = tmp_path / "imgs.ridc"
    save_images(p, batch)
    out = load_images(p)
    assert out.ids == [3, 9]
    assert np.array_equal(out.images.data, batch.images.data)


# ---------------------------------------------------------------- reports


def _full_report(**kw):
    rep = MetricReport(condition="rid", eps=8 / 255, seed=0, config_fingerprint="ab12")
    for f in ("fid", "ism", "detect_rate", "aism", "ism_clean", "detect_rate_clean",
              "aism_clean", "brisque_mean", "brisque_std", "refs_loss_clean",
              "refs_loss_defended"):
        setattr(rep, f, 0.25)
    rep.probe_t = [0.1, 0.5]
    rep.probe_clean = [1.0, 2.0]
    rep.probe_defended = [1.5, 2.5]
    for k, v in kw.items():
        setattr(rep, k, v)
    return rep


def test_report_rejects_non_finite():
    rep = _full_report(fid=float("nan"))
    with pytest.raises(ReportError):
        rep.validate()
    partial = _full_report(fid=float("nan"), partial=True)
    partial.validate()  # partial reports may carry gaps


def test_report_roundtrip_and_merge(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    _full_report().save(p1)
    _full_report(seed=1).save(p2)
    assert load_report(p1).probe_defended == [1.5, 2.5]
    merged = merge_reports([p1, p2], tmp_path / "m.json")
    assert len(merged["conditions"]) == 2
    with pytest.raises(ReportError):
        merge_reports([p1, p1], tmp_path / "dup.json")


def test_report_schema_version_guard(tmp_path):
    p = tmp_path / "r.json"
    _full_report().save(p)
    doc = json.loads(p.read_text())
    doc["schema_version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(ReportError):
        load_report(p)


def test_csv_outputs(tmp_path):
    reps = [_full_report(), _full_report(seed=1)]
    write_plot_csv(reps, tmp_path / "h.csv")
    write_curve_csv(reps, tmp_path / "c.csv")
    head = (tmp_path / "h.csv").read_text().splitlines()
    assert head[0].startswith("condition,eps,seed,fid")
    assert len(head) == 3
    curves = (tmp_path / "c.csv").read_text().splitlines()
    assert len(curves) == 1 + 2 * 2


# ---------------------------------------------------------------- CLI


def _run_cli(*args):
    return subprocess.run([sys.executable, "-m", "idlab.harness.cli", *args],
                          capture_output=True, text=True)


def test_cli_dataset_gen_and_exit_codes(tmp_path):
    cfg = {"dataset": {"n_ids": 4, "per_id": 15}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    res = _run_cli("dataset", "gen", "--config", str(cfg_path),
                   "--out-dir", str(tmp_path / "out"))
    assert res.returncode == 0, res.stderr
    doc = json.loads(res.stdout)
    assert doc["n_ids"] == 4
    assert (tmp_path / "out" / "train.ridc").exists()

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dataset": {"bogus": 1}}))
    res = _run_cli("dataset", "gen", "--config", str(bad), "--out-dir", str(tmp_path))
    assert res.returncode == 1

    res = _run_cli("report", "merge")
    assert res.returncode == 1


def test_cli_report_merge_runtime_error(tmp_path):
    p = tmp_path / "nope.json"
    p.write_text("{}")
    res = _run_cli("report", "merge", str(p))
    assert res.returncode == 2
