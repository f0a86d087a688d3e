"""Dataset container, importers, normalization, subject splits and storage.

On-disk layout of a dataset directory::

    manifest.json     shape, sample_rate, target_name, channel_names,
                      normalization, split, checksum
    epochs.f32le      row-major (epoch, channel, time) little-endian float32
    labels.u8         one byte per epoch
    subjects.u16      little-endian uint16 per epoch
    provenance.u8     0 real, 1 synthetic, 2 noise-control
    sources.i32le     optional; index of the conditioning real epoch (-1 if none)
"""

from __future__ import annotations

import hashlib
import json
import logging
import pickle
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TARGETS = ("valence", "arousal", "dominance", "liking", "vigilance")
DEAP_RATING_COLUMNS = {"valence": 0, "arousal": 1, "dominance": 2, "liking": 3}
PROVENANCE = {"real": 0, "synthetic": 1, "noise-control": 2}
PROVENANCE_NAMES = {v: k for k, v in PROVENANCE.items()}

DEAP_SAMPLE_RATE = 128
DEAP_BASELINE_SECONDS = 3
DEAP_TRIAL_SECONDS = 60
DEAP_CHANNELS = 32
RATING_THRESHOLD = 5.0
SADT_CHANNELS = 30

_FILES = ("epochs.f32le", "labels.u8", "subjects.u16", "provenance.u8")
_SOURCES_FILE = "sources.i32le"


class DataError(ValueError):
    """Malformed source data or dataset files."""


class ChecksumError(DataError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train: frozenset
    val: frozenset
    test: frozenset
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, frozenset(int(s) for s in getattr(self, name)))
        if self.train & self.val or self.train & self.test or self.val & self.test:
            raise DataError("split subject sets overlap")

    @property
    def subjects(self) -> frozenset:
        return self.train | self.val | self.test

    def to_dict(self) -> dict:
        return {
            "train": sorted(self.train),
            "val": sorted(self.val),
            "test": sorted(self.test),
            "ratios": list(self.ratios),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            train=d["train"],
            val=d["val"],
            test=d["test"],
            ratios=tuple(d.get("ratios", (0.70, 0.15, 0.15))),
            seed=d.get("seed"),
        )


@dataclass
class LabeledDataset:
    epochs: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    target_name: str
    provenance: np.ndarray
    sample_rate: float = 128.0
    channel_names: list[str] | None = None
    normalization: dict | None = None
    split: SplitSpec | None = None
    source_index: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.epochs = np.ascontiguousarray(self.epochs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.uint16)
        self.provenance = _provenance_codes(self.provenance, len(self.labels))
        if self.source_index is not None:
            self.source_index = np.asarray(self.source_index, dtype=np.int32)
        self.validate()

    def validate(self) -> None:
        n = len(self.epochs)
        if self.epochs.ndim != 3:
            raise DataError(f"epochs must be (N, C, L), got {self.epochs.shape}")
        lengths = {len(self.labels), len(self.subject_ids), len(self.provenance)}
        if self.source_index is not None:
            lengths.add(len(self.source_index))
        if lengths != {n}:
            raise DataError("epochs, labels, subject_ids and provenance lengths differ")
        if np.any(self.labels > 1):
            raise DataError("labels must be 0 or 1")
        if not np.all(np.isfinite(self.epochs)):
            raise DataError("epochs contain non-finite values")
        if self.target_name not in TARGETS:
            raise DataError(f"unknown target {self.target_name!r}")
        if self.channel_names is not None and len(self.channel_names) != self.epochs.shape[1]:
            raise DataError("channel_names length does not match channel count")

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def epoch_shape(self) -> tuple[int, int]:
        return tuple(self.epochs.shape[1:])

    @property
    def is_normalized(self) -> bool:
        return bool(self.normalization and self.normalization.get("applied"))

    def subset(self, mask_or_index) -> "LabeledDataset":
        idx = np.asarray(mask_or_index)
        return replace(
            self,
            epochs=self.epochs[idx],
            labels=self.labels[idx],
            subject_ids=self.subject_ids[idx],
            provenance=self.provenance[idx],
            source_index=None if self.source_index is None else self.source_index[idx],
        )

    def split_mask(self, part: str) -> np.ndarray:
        if self.split is None:
            raise DataError("dataset has no subject split")
        subjects = getattr(self.split, part)
        return np.isin(self.subject_ids, sorted(subjects))

    def part(self, part: str) -> "LabeledDataset":
        return self.subset(self.split_mask(part))


def _provenance_codes(provenance, n) -> np.ndarray:
    if isinstance(provenance, str):
        return np.full(n, PROVENANCE[provenance], dtype=np.uint8)
    arr = np.asarray(provenance)
    if arr.dtype.kind in "US":
        return np.array([PROVENANCE[str(p)] for p in arr], dtype=np.uint8)
    arr = arr.astype(np.uint8)
    if np.any(arr > 2):
        raise DataError("provenance codes must be 0, 1 or 2")
    return arr


def concatenate(*parts: LabeledDataset) -> LabeledDataset:
    first = parts[0]
    for p in parts[1:]:
        if p.epoch_shape != first.epoch_shape:
            raise DataError("cannot concatenate datasets with different epoch shapes")
    sources = None
    if any(p.source_index is not None for p in parts):
        sources = np.concatenate(
            [p.source_index if p.source_index is not None else np.full(len(p), -1) for p in parts]
        )
    return replace(
        first,
        epochs=np.concatenate([p.epochs for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        subject_ids=np.concatenate([p.subject_ids for p in parts]),
        provenance=np.concatenate([p.provenance for p in parts]),
        source_index=sources,
    )


def binarize_ratings(ratings, threshold: float = RATING_THRESHOLD) -> np.ndarray:
    """High (1) strictly above the threshold, low (0) at or below it."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if not np.all(np.isfinite(ratings)) or np.any((ratings < 1) | (ratings > 9)):
        raise DataError("ratings must be finite values on the 1-9 scale")
    return (ratings > threshold).astype(np.uint8)


def _load_deap_subject(path: Path) -> tuple[np.ndarray, np.ndarray, float | None]:
    if path.suffix == ".dat":
        with open(path, "rb") as fh:
            obj = pickle.load(fh, encoding="latin1")
        return np.asarray(obj["data"]), np.asarray(obj["labels"]), None
    if path.suffix == ".npz":
        with np.load(path) as z:
            rate = float(z["sample_rate"]) if "sample_rate" in z else None
            return z["data"], z["labels"], rate
    if path.suffix == ".mat":
        from scipy.io import loadmat

        m = loadmat(path)
        return np.asarray(m["data"]), np.asarray(m["labels"]), None
    raise DataError(f"unsupported DEAP file {path}")


def _subject_number(path: Path) -> int:
    digits = "".join(ch for ch in path.stem if ch.isdigit())
    if not digits:
        raise DataError(f"cannot read a subject number from {path.name}")
    return int(digits)


def import_deap(
    source,
    target_name: str,
    expected_subjects: int | None = None,
    sample_rate: int = DEAP_SAMPLE_RATE,
) -> LabeledDataset:
    """Epoch the preprocessed DEAP recordings into one-second (32, 128) epochs.

    ``source`` is a directory of per-subject files (``s01.dat`` pickles as
    distributed, or ``.npz``/``.mat`` with ``data`` and ``labels``).  Each
    trial must hold the 3 s baseline followed by 60 s of stimulus.
    """
    if target_name not in DEAP_RATING_COLUMNS:
        raise DataError(f"DEAP target must be one of {sorted(DEAP_RATING_COLUMNS)}")
    source = Path(source)
    if not source.is_dir():
        raise DataError(f"DEAP source {source} is not a directory")
    files = sorted(
        (p for p in source.iterdir() if p.suffix in (".dat", ".npz", ".mat")),
        key=_subject_number,
    )
    if not files:
        raise DataError(f"no subject files found in {source}")
    if expected_subjects is not None and len(files) != expected_subjects:
        raise DataError(f"expected {expected_subjects} subjects, found {len(files)}")

    baseline = DEAP_BASELINE_SECONDS * sample_rate
    trial_len = DEAP_TRIAL_SECONDS * sample_rate
    col = DEAP_RATING_COLUMNS[target_name]
    epochs, labels, subjects = [], [], []
    for path in files:
        data, ratings, rate = _load_deap_subject(path)
        if rate is not None and rate != sample_rate:
            raise DataError(f"{path.name}: sample rate {rate} Hz, expected {sample_rate} Hz")
        if data.ndim != 3 or data.shape[1] < DEAP_CHANNELS:
            raise DataError(f"{path.name}: expected (trials, >=32 channels, time), got {data.shape}")
        if data.shape[2] != baseline + trial_len:
            raise DataError(
                f"{path.name}: {data.shape[2]} samples per trial; expected "
                f"{baseline + trial_len} at {sample_rate} Hz (wrong sample rate?)"
            )
        ratings = np.asarray(ratings, dtype=np.float64)
        if ratings.ndim != 2 or ratings.shape[0] != data.shape[0] or ratings.shape[1] <= col:
            raise DataError(f"{path.name}: malformed ratings of shape {ratings.shape}")
        try:
            trial_labels = binarize_ratings(ratings[:, col])
        except DataError as exc:
            raise DataError(f"{path.name}: {exc}") from None
        eeg = data[:, :DEAP_CHANNELS, baseline:]
        n_trials = eeg.shape[0]
        # (trials, C, 60*fs) -> (trials*60, C, fs)
        seg = eeg.reshape(n_trials, DEAP_CHANNELS, DEAP_TRIAL_SECONDS, sample_rate)
        seg = seg.transpose(0, 2, 1, 3).reshape(-1, DEAP_CHANNELS, sample_rate)
        epochs.append(seg.astype(np.float32))
        labels.append(np.repeat(trial_labels, DEAP_TRIAL_SECONDS))
        subjects.append(np.full(len(seg), _subject_number(path), dtype=np.uint16))
    return LabeledDataset(
        epochs=np.concatenate(epochs),
        labels=np.concatenate(labels),
        subject_ids=np.concatenate(subjects),
        target_name=target_name,
        provenance="real",
        sample_rate=float(sample_rate),
        channel_names=[f"EEG{i:02d}" for i in range(DEAP_CHANNELS)],
    )


def pad_channels(epochs: np.ndarray, n_channels: int = DEAP_CHANNELS) -> np.ndarray:
    """Append copies of the trailing channels until ``n_channels`` are present."""
    c = epochs.shape[1]
    extra = n_channels - c
    if extra < 0 or extra > c:
        raise DataError(f"cannot pad {c} channels to {n_channels}")
    if extra == 0:
        return epochs
    return np.concatenate([epochs, epochs[:, c - extra :]], axis=1)


def import_sadt(source, epoch_length: int | None = DEAP_SAMPLE_RATE) -> LabeledDataset:
    """Load SADT alert/drowsy epochs and pad 30 channels to 32.

    ``source`` is a ``.mat`` or ``.npz`` file with ``EEGsample`` (N, 30, L),
    ``substate`` (0 alert, 1 drowsy) and ``subindex``.  Epochs longer than
    ``epoch_length`` keep their first ``epoch_length`` samples.
    """
    source = Path(source)
    if not source.exists():
        raise DataError(f"SADT source {source} does not exist")
    if source.suffix == ".mat":
        from scipy.io import loadmat

        m = loadmat(source)
    elif source.suffix == ".npz":
        m = dict(np.load(source))
    else:
        raise DataError(f"unsupported SADT file {source}")
    try:
        x = np.asarray(m["EEGsample"], dtype=np.float32)
        y = np.asarray(m["substate"]).reshape(-1)
        subj = np.asarray(m["subindex"]).reshape(-1)
    except KeyError as exc:
        raise DataError(f"SADT file lacks field {exc}") from None
    if x.ndim != 3 or x.shape[1] != SADT_CHANNELS:
        raise DataError(f"SADT epochs must have {SADT_CHANNELS} channels, got shape {x.shape}")
    if not (len(y) == len(subj) == len(x)):
        raise DataError("SADT labels/subjects do not match the epoch count")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("SADT labels must be 0 (alert) or 1 (drowsy)")
    if epoch_length is not None:
        if x.shape[2] < epoch_length:
            raise DataError(f"SADT epochs shorter than {epoch_length} samples")
        x = x[:, :, :epoch_length]
    names = [f"EEG{i:02d}" for i in range(SADT_CHANNELS)]
    return LabeledDataset(
        epochs=pad_channels(x),
        labels=y.astype(np.uint8),
        subject_ids=subj.astype(np.uint16),
        target_name="vigilance",
        provenance="real",
        sample_rate=float(DEAP_SAMPLE_RATE),
        channel_names=names + [names[-2] + "_dup", names[-1] + "_dup"],
    )


def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    # every split gets at least one subject, taken from the largest
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_counts(n_subjects: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    if n_subjects < len(ratios):
        raise DataError(f"need at least {len(ratios)} subjects, got {n_subjects}")
    if not np.isclose(sum(ratios), 1.0) or min(ratios) <= 0:
        raise DataError("ratios must be positive and sum to 1")
    return tuple(_largest_remainder(n_subjects, ratios))


def split_subject_independent(
    dataset: LabeledDataset,
    ratios=(0.70, 0.15, 0.15),
    seed: int = 0,
    stratify: bool = True,
    candidates: int = 64,
) -> SplitSpec:
    """Assign whole subjects to train/val/test by shuffled largest-remainder counts.

    With ``stratify`` the seeded candidate assignment whose per-split share of
    positive labels is closest to the global share wins; all candidates
    satisfy the subject constraint equally.
    """
    subjects = np.unique(dataset.subject_ids)
    counts = split_counts(len(subjects), ratios)
    rng = np.random.default_rng(seed)
    n_try = candidates if stratify else 1
    global_rate = dataset.labels.mean() if len(dataset) else 0.0
    pos = {s: dataset.labels[dataset.subject_ids == s].sum() for s in subjects}
    tot = {s: (dataset.subject_ids == s).sum() for s in subjects}
    best, best_score = None, np.inf
    for _ in range(n_try):
        perm = rng.permutation(subjects)
        parts = np.split(perm, np.cumsum(counts)[:-1])
        score = 0.0
        for p in parts:
            n = sum(tot[s] for s in p)
            if n:
                score = max(score, abs(sum(pos[s] for s in p) / n - global_rate))
        if score < best_score - 1e-12:
            best, best_score = parts, score
    return SplitSpec(
        train=best[0], val=best[1], test=best[2], ratios=tuple(ratios), seed=seed
    )


def compute_normalization(epochs: np.ndarray) -> dict:
    """Per-channel mean/std; zero-variance channels get std 1 with a warning."""
    x = epochs.astype(np.float64)
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    flat = std == 0
    if np.any(flat):
        warnings.warn(
            f"zero-variance channels {np.flatnonzero(flat).tolist()}; using unit variance",
            RuntimeWarning,
            stacklevel=2,
        )
        std = np.where(flat, 1.0, std)
    return {"mean": mean.tolist(), "std": std.tolist(), "applied": False}


def apply_normalization(dataset: LabeledDataset, stats: dict) -> LabeledDataset:
    if dataset.is_normalized:
        raise DataError("dataset is already normalized; refusing to apply statistics twice")
    mean = np.asarray(stats["mean"], dtype=np.float64)[None, :, None]
    std = np.asarray(stats["std"], dtype=np.float64)[None, :, None]
    if mean.shape[1] != dataset.epoch_shape[0]:
        raise DataError("normalization statistics do not match the channel count")
    epochs = ((dataset.epochs.astype(np.float64) - mean) / std).astype(np.float32)
    return replace(dataset, epochs=epochs, normalization={**stats, "applied": True})


def normalize(dataset: LabeledDataset, split: SplitSpec | None = None) -> LabeledDataset:
    """Z-score every channel with statistics from real training-split epochs."""
    split = split or dataset.split
    mask = dataset.provenance == PROVENANCE["real"]
    if split is not None:
        mask &= np.isin(dataset.subject_ids, sorted(split.train))
    if not mask.any():
        raise DataError("no real training epochs to compute normalization statistics")
    stats = compute_normalization(dataset.epochs[mask])
    out = apply_normalization(dataset, stats)
    if split is not None and out.split is None:
        out = replace(out, split=split)
    return out


def _sha256(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def save_dataset(dataset: LabeledDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dataset.epochs.astype("<f4").tofile(path / "epochs.f32le")
    dataset.labels.astype("u1").tofile(path / "labels.u8")
    dataset.subject_ids.astype("<u2").tofile(path / "subjects.u16")
    dataset.provenance.astype("u1").tofile(path / "provenance.u8")
    files = [path / f for f in _FILES]
    if dataset.source_index is not None:
        dataset.source_index.astype("<i4").tofile(path / _SOURCES_FILE)
        files.append(path / _SOURCES_FILE)
    elif (path / _SOURCES_FILE).exists():
        (path / _SOURCES_FILE).unlink()
    manifest = {
        "n_epochs": len(dataset),
        "shape": list(dataset.epoch_shape),
        "sample_rate": dataset.sample_rate,
        "target_name": dataset.target_name,
        "channel_names": dataset.channel_names,
        "normalization": dataset.normalization,
        "split": dataset.split.to_dict() if dataset.split else None,
        "has_sources": dataset.source_index is not None,
        "meta": dataset.meta,
        "checksum": _sha256(files),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(path, verify: bool = True) -> LabeledDataset:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise DataError(f"{path} has no manifest.json")
    manifest = json.loads(mf.read_text())
    files = [path / f for f in _FILES]
    if manifest.get("has_sources"):
        files.append(path / _SOURCES_FILE)
    for f in files:
        if not f.exists():
            raise DataError(f"missing dataset file {f.name}")
    if verify and _sha256(files) != manifest["checksum"]:
        raise ChecksumError(f"checksum mismatch in {path}")
    n = int(manifest["n_epochs"])
    c, l = manifest["shape"]
    flat = np.fromfile(path / "epochs.f32le", dtype="<f4")
    if flat.size != n * c * l:
        raise DataError(
            f"payload holds {flat.size} values; manifest shape ({c}, {l}) x {n} needs {n * c * l}"
        )
    return LabeledDataset(
        epochs=flat.reshape(n, c, l).astype(np.float32),
        labels=np.fromfile(path / "labels.u8", dtype="u1"),
        subject_ids=np.fromfile(path / "subjects.u16", dtype="<u2"),
        target_name=manifest["target_name"],
        provenance=np.fromfile(path / "provenance.u8", dtype="u1"),
        sample_rate=manifest["sample_rate"],
        channel_names=manifest.get("channel_names"),
        normalization=manifest.get("normalization"),
        split=SplitSpec.from_dict(manifest["split"]) if manifest.get("split") else None,
        source_index=np.fromfile(path / _SOURCES_FILE, dtype="<i4")
        if manifest.get("has_sources")
        else None,
        meta=manifest.get("meta") or {},
    )


def make_toy_corpus(
    n_train: int = 400,
    n_test: int = 100,
    n_channels: int = 2,
    length: int = 64,
    freqs: tuple[float, float] = (4.0, 6.0),
    noise: float = 1.0,
    sample_rate: float = 64.0,
    seed: int = 0,
    train_subjects: int = 8,
    test_subjects: int = 2,
) -> LabeledDataset:
    """Two-class sinusoid corpus: class k oscillates at ``freqs[k]`` Hz plus noise.

    Training and test epochs come from disjoint pseudo-subjects; the split
    is stored on the dataset (no validation subjects).
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    labels = np.tile([0, 1], n // 2 + 1)[:n]
    rng.shuffle(labels[:n_train])
    rng.shuffle(labels[n_train:])
    t = np.arange(length) / sample_rate
    f = np.asarray(freqs)[labels][:, None, None]
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 1)) + rng.uniform(0, 0.5, size=(n, n_channels, 1))
    amp = rng.uniform(0.8, 1.2, size=(n, n_channels, 1))
    x = amp * np.sin(2 * np.pi * f * t[None, None, :] + phase)
    x += noise * rng.standard_normal(x.shape)
    subjects = np.concatenate(
        [
            np.arange(n_train) % train_subjects,
            train_subjects + np.arange(n_test) % test_subjects,
        ]
    )
    split = SplitSpec(
        train=range(train_subjects),
        val=(),
        test=range(train_subjects, train_subjects + test_subjects),
        ratios=(n_train / n, 0.0, n_test / n),
    )
    return LabeledDataset(
        epochs=x,
        labels=labels,
        subject_ids=subjects,
        target_name="arousal",
        provenance="real",
        sample_rate=sample_rate,
        channel_names=[f"ch{i}" for i in range(n_channels)],
        split=split,
    )
