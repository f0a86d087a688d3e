import csv
import json

import numpy as np
import pytest
from conftest import TINY

from eegdiff.classifiers import ClassifierSpec
from eegdiff.data import PROVENANCE, DataError, load_dataset
from eegdiff.experiment import (
    RECORD_FIELDS,
    ExperimentConfig,
    cmd_generate_synthetic,
    cmd_mix_experiment,
    cmd_noise_control,
    cmd_train_diffusion,
    read_records,
)
from eegdiff.training import TrainOptions, read_loss_curve

OPTS = TrainOptions(steps=6, batch_size=8, warmup_steps=2, log_every=0)


@pytest.fixture
def checkpoint(tmp_path, toy_dataset_path):
    out = tmp_path / "ck"
    cmd_train_diffusion(toy_dataset_path, out, OPTS, TINY)
    return out


def test_train_writes_checkpoint_and_loss(checkpoint):
    assert (checkpoint / "model.pt").exists()
    curve = read_loss_curve(checkpoint / "loss.csv")
    assert [s for s, _ in curve] == list(range(1, 7))
    meta = json.loads((checkpoint / "checkpoint.json").read_text())
    assert meta["target_name"] == "arousal" and meta["normalization"]["applied"]


def test_train_resume_continues_step_count(checkpoint, toy_dataset_path):
    opts = TrainOptions(steps=10, batch_size=8, warmup_steps=2, log_every=0)
    _, state = cmd_train_diffusion(toy_dataset_path, checkpoint, opts, resume=True)
    assert state.step == 10
    assert len(read_loss_curve(checkpoint / "loss.csv")) == 10


def test_train_invalid_dataset(tmp_path):
    with pytest.raises(DataError):
        cmd_train_diffusion(tmp_path / "missing", tmp_path / "out", OPTS, TINY)


@pytest.mark.parametrize("percent, factor", [(100, 1), (1000, 10), (50, 0.5)])
def test_generate_counts_and_sources(checkpoint, toy_dataset_path, percent, factor):
    ds = load_dataset(toy_dataset_path)
    n_train = int(ds.split_mask("train").sum())
    syn = cmd_generate_synthetic(checkpoint, toy_dataset_path, 0.01, percent, seed=0,
                                 inference_steps=3)
    assert len(syn) == round(n_train * factor)
    assert np.all(syn.provenance == PROVENANCE["synthetic"])
    assert np.all(ds.split_mask("train")[syn.source_index])
    assert np.array_equal(syn.labels, ds.labels[syn.source_index])


def test_generate_shape_mismatch(tmp_path, checkpoint, toy_dataset):
    from dataclasses import replace

    from eegdiff.data import save_dataset

    wide = replace(toy_dataset, epochs=np.zeros((len(toy_dataset), 4, 16), np.float32),
                   channel_names=None)
    save_dataset(wide, tmp_path / "wide")
    with pytest.raises(DataError, match="checkpoint"):
        cmd_generate_synthetic(checkpoint, tmp_path / "wide", 0.0, 100)


def _cfg(tmp_path, ds_path, checkpoint=None, **kw):
    base = dict(
        dataset=str(ds_path),
        output_dir=str(tmp_path / "results"),
        checkpoint=None if checkpoint is None else str(checkpoint),
        deltas=(0.0, 0.01),
        mix_percents=(50, 100),
        classifiers=[ClassifierSpec("svm_rbf")],
        seeds=(0,),
        k=3,
        inference_steps=3,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_invariants(tmp_path, toy_dataset_path):
    with pytest.raises(ValueError):
        _cfg(tmp_path, toy_dataset_path, deltas=(-0.1,))
    with pytest.raises(ValueError):
        _cfg(tmp_path, toy_dataset_path, mix_percents=(0,))
    cfg = _cfg(tmp_path, toy_dataset_path, classifiers=[{"kind": "eegnet"}])
    assert cfg.classifiers[0].kind == "eegnet"
    assert ExperimentConfig("a", "b").mix_percents == tuple(range(50, 1001, 50))


def test_mix_experiment_schema_and_resume(tmp_path, toy_dataset_path, checkpoint):
    cfg = _cfg(tmp_path, toy_dataset_path, checkpoint)
    path = cmd_mix_experiment(cfg)
    with open(path) as fh:
        assert tuple(csv.DictReader(fh).fieldnames) == RECORD_FIELDS
    rows = read_records(path)
    cells = {(r["kind"], r["delta"], r["mix_percent"]) for r in rows}
    assert cells == {("real", None, 0), ("synthetic", 0.0, 50), ("synthetic", 0.0, 100),
                     ("synthetic", 0.01, 50), ("synthetic", 0.01, 100)}
    assert len(rows) == 5 * cfg.k
    summary = json.loads((tmp_path / "results" / "summary.json").read_text())
    assert summary["arousal"]["svm_rbf"]["real"]["gain"] == 0.0

    cmd_mix_experiment(cfg)  # every cell is complete, nothing is recomputed
    assert len(read_records(path)) == len(rows)
    # synthetic corpora are conditioned only on training epochs
    ds = load_dataset(toy_dataset_path)
    for d in ("0", "0.01"):
        syn = load_dataset(tmp_path / "results" / "synthetic" / f"delta_{d}_seed_0")
        assert not np.any(ds.split_mask("test")[syn.source_index])


def test_failed_cell_is_logged_and_sweep_continues(tmp_path, toy_dataset_path, checkpoint):
    cfg = _cfg(tmp_path, toy_dataset_path, checkpoint,
               synthetic={0.0: str(tmp_path / "does-not-exist")})
    cmd_mix_experiment(cfg)
    failures = (tmp_path / "results" / "failures.jsonl").read_text().splitlines()
    assert len(failures) == 1 and "does-not-exist" in failures[0]
    kinds = {(r["kind"], r["delta"]) for r in read_records(tmp_path / "results" / "records.csv")}
    assert ("synthetic", 0.01) in kinds and ("synthetic", 0.0) not in kinds


def test_noise_control_schema(tmp_path, toy_dataset_path):
    cfg = _cfg(tmp_path, toy_dataset_path, mix_percents=(100,))
    rows = read_records(cmd_noise_control(cfg))
    assert {r["kind"] for r in rows} == {"real", "noise-control"}
    assert all(r["delta"] is None for r in rows)
    assert len(rows) == 2 * cfg.k


def test_missing_checkpoint_is_a_logged_failure(tmp_path, toy_dataset_path):
    cfg = _cfg(tmp_path, toy_dataset_path, deltas=(0.01,))
    cmd_mix_experiment(cfg)
    assert (tmp_path / "results" / "failures.jsonl").exists()
