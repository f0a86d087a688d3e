"""Experiment protocol: diffusion training, synthetic corpora and mix sweeps.

Sweep results go to ``<output_dir>/records.csv``, one row per fold.  A cell
is keyed by (target, classifier, kind, delta, mix_percent, seed); re-running a
sweep skips cells that already have all their folds.
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import ClassifierSpec, crossval_evaluate
from .data import PROVENANCE, DataError, LabeledDataset, load_dataset, save_dataset
from .diffusion import epoch_seed
from .estimator import DiffusionAugmenter
from .schedule import build_linear_schedule
from .training import TrainOptions, load_training_run, train_denoiser
from .unet import DenoiserConfig, build_denoiser

log = logging.getLogger(__name__)

RECORD_FIELDS = (
    "target",
    "classifier",
    "delta",
    "mix_percent",
    "fold",
    "accuracy",
    "balanced_accuracy",
    "seed",
    "kind",
)
DEFAULT_DELTAS = (0.0, 0.01, 0.05, 0.1)
DEFAULT_MIX_PERCENTS = tuple(range(50, 1001, 50))


@dataclass
class ExperimentConfig:
    dataset: str
    output_dir: str
    checkpoint: str | None = None
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    mix_percents: tuple[int, ...] = DEFAULT_MIX_PERCENTS
    classifiers: list[ClassifierSpec] = field(
        default_factory=lambda: [ClassifierSpec(k) for k in ("svm_rbf", "eegnet", "tsception")]
    )
    seeds: tuple[int, ...] = (0,)
    k: int = 5
    inference_steps: int | None = None
    metric: str = "balanced_accuracy"
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(d < 0 for d in self.deltas):
            raise ValueError("delta values must be non-negative")
        if any(m <= 0 for m in self.mix_percents):
            raise ValueError("mix percentages must be positive")
        self.classifiers = [
            c if isinstance(c, ClassifierSpec) else ClassifierSpec(**c) for c in self.classifiers
        ]

    @property
    def target_name(self) -> str:
        return load_dataset(self.dataset, verify=False).target_name


# --------------------------------------------------------------------------- records


def _fmt_delta(delta) -> str:
    return "" if delta is None else repr(float(delta))


def cell_key(target, classifier, kind, delta, mix, seed) -> tuple:
    return (str(target), str(classifier), str(kind), _fmt_delta(delta), int(mix), int(seed))


class ResultsStore:
    """Append-only CSV of fold records; the single writer of a results directory."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "records.csv"
        self.failures = self.dir / "failures.jsonl"

    def rows(self) -> list[dict]:
        return read_records(self.path) if self.path.exists() else []

    def completed(self, k: int) -> set:
        counts: dict[tuple, int] = {}
        for r in self.rows():
            key = cell_key(r["target"], r["classifier"], r["kind"], r["delta"], r["mix_percent"], r["seed"])
            counts[key] = counts.get(key, 0) + 1
        return {key for key, n in counts.items() if n >= k}

    def append(self, rows: list[dict]) -> None:
        new = not self.path.exists()
        with open(self.path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            if new:
                w.writeheader()
            for r in rows:
                w.writerow({k: r.get(k, "") for k in RECORD_FIELDS})

    def record_failure(self, key: tuple, exc: BaseException) -> None:
        with open(self.failures, "a") as fh:
            fh.write(json.dumps({"cell": list(key), "error": repr(exc),
                                 "traceback": traceback.format_exc()}) + "\n")


def read_records(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(
                {
                    "target": r["target"],
                    "classifier": r["classifier"],
                    "delta": float(r["delta"]) if r.get("delta") not in ("", None) else None,
                    "mix_percent": int(float(r["mix_percent"])),
                    "fold": int(r["fold"]),
                    "accuracy": float(r["accuracy"]),
                    "balanced_accuracy": float(r["balanced_accuracy"])
                    if r.get("balanced_accuracy") not in ("", None)
                    else float(r["accuracy"]),
                    "seed": int(r["seed"]) if r.get("seed") not in ("", None) else 0,
                    "kind": r.get("kind") or ("real" if int(float(r["mix_percent"])) == 0 else "synthetic"),
                }
            )
    return out


# --------------------------------------------------------------------------- commands


def cmd_train_diffusion(
    dataset_path,
    output_dir,
    opts: TrainOptions | None = None,
    config: DenoiserConfig | None = None,
    T: int = 500,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    max_terminal_gamma: float | None = 0.01,
    seed: int = 0,
    resume: bool = False,
):
    """Train the denoiser on the real training-split epochs of a dataset.

    With ``resume`` and an existing checkpoint in ``output_dir``, training
    continues from the stored step up to ``opts.steps``.
    """
    ds = load_dataset(dataset_path)
    train = _real_part(ds, "train")
    opts = opts or TrainOptions()
    out = Path(output_dir)
    meta = {"seed": seed, "dataset": str(dataset_path), "target_name": ds.target_name,
            "normalization": ds.normalization}
    if resume and (out / "checkpoint.json").exists():
        model, schedule, state, _ = load_training_run(out)
        if model.epoch_shape != train.epoch_shape:
            raise DataError("checkpoint epoch shape does not match the dataset")
        return train_denoiser(model, train.epochs, schedule, opts, rng=seed,
                              checkpoint_dir=out, resume=state, meta=meta)
    schedule = build_linear_schedule(T, beta_start, beta_end, max_terminal_gamma)
    model = build_denoiser(config or DenoiserConfig(), train.epoch_shape, seed=seed)
    return train_denoiser(model, train.epochs, schedule, opts, rng=seed,
                          checkpoint_dir=out, meta=meta)


def _real_part(ds: LabeledDataset, part: str) -> LabeledDataset:
    if ds.split is None:
        raise DataError("dataset has no subject split; re-import it")
    mask = ds.split_mask(part) & (ds.provenance == PROVENANCE["real"])
    return ds.subset(mask)


def cmd_generate_synthetic(
    checkpoint,
    dataset_path,
    delta: float,
    count_percent: float,
    seed: int = 0,
    output_dir=None,
    inference_steps: int | None = None,
) -> LabeledDataset:
    """Synthetic epochs amounting to ``count_percent``% of the real training split.

    Conditions are drawn uniformly with replacement from training-split
    epochs only; labels and subject ids are inherited and ``source_index``
    records the conditioning epoch's index in the full dataset.
    """
    ds = load_dataset(dataset_path)
    train_idx = np.flatnonzero(ds.split_mask("train") & (ds.provenance == PROVENANCE["real"])) \
        if ds.split is not None else None
    if train_idx is None:
        raise DataError("dataset has no subject split; re-import it")
    aug = DiffusionAugmenter.from_checkpoint(checkpoint, delta=delta, inference_steps=inference_steps)
    if tuple(aug.epoch_shape_) != ds.epoch_shape:
        raise DataError(f"checkpoint expects epochs {aug.epoch_shape_}, dataset has {ds.epoch_shape}")
    n = int(round(len(train_idx) * count_percent / 100.0))
    pick = np.random.default_rng(epoch_seed(seed, -1))
    source = train_idx[pick.integers(0, len(train_idx), size=n)] if n else np.empty(0, int)
    X = aug.generate_from(ds.epochs[source], seed=seed) if n else np.empty((0, *ds.epoch_shape), np.float32)
    syn = LabeledDataset(
        epochs=X,
        labels=ds.labels[source],
        subject_ids=ds.subject_ids[source],
        target_name=ds.target_name,
        provenance="synthetic",
        sample_rate=ds.sample_rate,
        channel_names=ds.channel_names,
        normalization=ds.normalization,
        split=ds.split,
        source_index=source,
        meta={"delta": float(delta), "count_percent": float(count_percent), "seed": int(seed),
              "checkpoint": str(checkpoint), "inference_steps": inference_steps},
    )
    if output_dir is not None:
        save_dataset(syn, output_dir)
    return syn


def _pool_and_test(ds: LabeledDataset):
    if ds.split is None:
        raise DataError("dataset has no subject split; re-import it")
    real = ds.provenance == PROVENANCE["real"]
    pool_idx = np.flatnonzero((ds.split_mask("train") | ds.split_mask("val")) & real)
    test_idx = np.flatnonzero(ds.split_mask("test") & real)
    if len(test_idx) == 0:
        raise DataError("test split is empty")
    return pool_idx, test_idx


def synthetic_augment(syn: LabeledDataset, pool_idx: np.ndarray, mix_percent: float):
    """Per-fold sampler drawing from synthetic epochs conditioned on that fold's training part."""
    by_source: dict[int, list[int]] = {}
    for j, s in enumerate(syn.source_index):
        by_source.setdefault(int(s), []).append(j)

    def augment(train_pos, rng):
        n = int(round(len(train_pos) * mix_percent / 100.0))
        if n == 0:
            return None
        eligible = [j for g in pool_idx[train_pos] for j in by_source.get(int(g), ())]
        if not eligible:
            raise DataError("no synthetic epochs are conditioned on this fold's training data")
        pick = rng.choice(np.asarray(eligible), size=n, replace=len(eligible) < n)
        return syn.epochs[pick], syn.labels[pick]

    return augment


def noise_augment(labels: np.ndarray, epoch_shape, mix_percent: float):
    """Per-fold sampler of standard-normal epochs with labels at the fold's class priors."""

    def augment(train_pos, rng):
        n = int(round(len(train_pos) * mix_percent / 100.0))
        if n == 0:
            return None
        prior = np.bincount(labels[train_pos], minlength=2) / len(train_pos)
        y = rng.choice(2, size=n, p=prior)
        X = rng.standard_normal((n, *epoch_shape)).astype(np.float32)
        return X, y

    return augment


def _run_cell(store, done, key, spec, X, y, cfg, test, augment, sample_rate):
    if key in done:
        return
    target, clf, kind, delta, mix, seed = key
    try:
        folds: list[dict] = []
        crossval_evaluate(spec, X, y, k=cfg.k, seed=seed, test_set=test, augment=augment,
                          metric=cfg.metric, sample_rate=sample_rate, records=folds)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.error("cell %s failed: %r", key, exc)
        store.record_failure(key, exc)
        return
    store.append([{"target": target, "classifier": clf, "kind": kind,
                   "delta": delta, "mix_percent": mix, "seed": seed, **f} for f in folds])
    done.add(key)


def _baselines(store, done, cfg, ds, X, y, test):
    for spec in cfg.classifiers:
        for seed in cfg.seeds:
            key = cell_key(ds.target_name, spec.kind, "real", None, 0, seed)
            _run_cell(store, done, key, spec, X, y, cfg, test, None, ds.sample_rate)


def _load_or_generate_pool(cfg: ExperimentConfig, ds_path, delta: float, seed: int):
    if delta in cfg.synthetic or str(delta) in cfg.synthetic:
        path = cfg.synthetic.get(delta, cfg.synthetic.get(str(delta)))
        return load_dataset(path)
    path = Path(cfg.output_dir) / "synthetic" / f"delta_{delta:g}_seed_{seed}"
    if (path / "manifest.json").exists():
        return load_dataset(path)
    if cfg.checkpoint is None:
        raise DataError(f"no synthetic corpus for delta={delta} and no checkpoint to generate one")
    return cmd_generate_synthetic(cfg.checkpoint, ds_path, delta, max(cfg.mix_percents),
                                  seed=seed, output_dir=path, inference_steps=cfg.inference_steps)


def cmd_mix_experiment(cfg: ExperimentConfig) -> Path:
    """Real-only baselines plus every (classifier, delta, mix, seed) cell."""
    ds = load_dataset(cfg.dataset)
    pool_idx, test_idx = _pool_and_test(ds)
    X, y = ds.epochs[pool_idx], ds.labels[pool_idx]
    test = (ds.epochs[test_idx], ds.labels[test_idx])
    store = ResultsStore(cfg.output_dir)
    done = store.completed(cfg.k)
    _baselines(store, done, cfg, ds, X, y, test)
    for seed in cfg.seeds:
        for delta in cfg.deltas:
            try:
                syn = _load_or_generate_pool(cfg, cfg.dataset, float(delta), seed)
            except Exception as exc:  # noqa: BLE001
                log.error("synthetic corpus for delta=%s failed: %r", delta, exc)
                store.record_failure(("synthetic", delta, seed), exc)
                continue
            if syn.source_index is None:
                raise DataError("synthetic corpus lacks source indices")
            for mix in cfg.mix_percents:
                for spec in cfg.classifiers:
                    key = cell_key(ds.target_name, spec.kind, "synthetic", delta, mix, seed)
                    _run_cell(store, done, key, spec, X, y, cfg, test,
                              synthetic_augment(syn, pool_idx, mix), ds.sample_rate)
    _write_summary(cfg.output_dir)
    return store.path


def cmd_noise_control(cfg: ExperimentConfig) -> Path:
    """Same protocol with pure Gaussian epochs in place of synthetic ones."""
    ds = load_dataset(cfg.dataset)
    pool_idx, test_idx = _pool_and_test(ds)
    X, y = ds.epochs[pool_idx], ds.labels[pool_idx]
    test = (ds.epochs[test_idx], ds.labels[test_idx])
    store = ResultsStore(cfg.output_dir)
    done = store.completed(cfg.k)
    _baselines(store, done, cfg, ds, X, y, test)
    for seed in cfg.seeds:
        for mix in cfg.mix_percents:
            for spec in cfg.classifiers:
                key = cell_key(ds.target_name, spec.kind, "noise-control", None, mix, seed)
                _run_cell(store, done, key, spec, X, y, cfg, test,
                          noise_augment(y, ds.epoch_shape, mix), ds.sample_rate)
    _write_summary(cfg.output_dir)
    return store.path


def _write_summary(output_dir) -> None:
    from .report import summarize

    path = Path(output_dir) / "records.csv"
    if path.exists():
        (Path(output_dir) / "summary.json").write_text(
            json.dumps(summarize(read_records(path)), indent=2)
        )
