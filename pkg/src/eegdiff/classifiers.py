"""EEG classifiers and the cross-validated evaluation protocol.

All classifiers follow the scikit-learn estimator API and take epochs as
``(N, C, L)`` arrays.  The deep models are trained with Adam and keep the
weights of the epoch with the best validation balanced accuracy when a
validation set is passed to ``fit``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.metrics import accuracy_score, balanced_accuracy_score
from sklearn.model_selection import StratifiedKFold
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .validation import check_binary_labels, check_epochs, check_epochs_labels

KINDS = ("svm_rbf", "eegnet", "tsception")
Z95 = 1.96


class DivergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------- networks


class EEGNet(nn.Module):
    """Compact CNN with temporal, depthwise-spatial and separable convolutions."""

    def __init__(
        self,
        n_channels: int,
        n_samples: int,
        n_classes: int = 2,
        kernel_length: int = 64,
        F1: int = 8,
        D: int = 2,
        F2: int = 16,
        dropout: float = 0.5,
    ):
        super().__init__()
        self.temporal = nn.Sequential(
            nn.Conv2d(1, F1, (1, kernel_length), padding="same", bias=False),
            nn.BatchNorm2d(F1),
        )
        self.spatial = nn.Sequential(
            nn.Conv2d(F1, F1 * D, (n_channels, 1), groups=F1, bias=False),
            nn.BatchNorm2d(F1 * D),
            nn.ELU(),
            nn.AvgPool2d((1, 4)),
            nn.Dropout(dropout),
        )
        self.separable = nn.Sequential(
            nn.Conv2d(F1 * D, F1 * D, (1, 16), padding="same", groups=F1 * D, bias=False),
            nn.Conv2d(F1 * D, F2, 1, bias=False),
            nn.BatchNorm2d(F2),
            nn.ELU(),
            nn.AvgPool2d((1, 8)),
            nn.Dropout(dropout),
        )
        self.classify = nn.Linear(F2 * (n_samples // 4 // 8), n_classes)

    def forward(self, x):
        x = self.separable(self.spatial(self.temporal(x[:, None])))
        return self.classify(x.flatten(1))


def _tsception_block(in_ch, out_ch, kernel, stride, pool):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride),
        nn.LeakyReLU(),
        nn.AvgPool2d((1, pool), stride=(1, pool)),
    )


class TSception(nn.Module):
    """Multi-scale temporal convolutions followed by global and hemispheric spatial ones."""

    windows = (0.5, 0.25, 0.125)
    pool = 8

    def __init__(
        self,
        n_channels: int,
        n_samples: int,
        sample_rate: float,
        n_classes: int = 2,
        num_T: int = 15,
        num_S: int = 15,
        hidden: int = 32,
        dropout: float = 0.5,
    ):
        super().__init__()
        if n_channels < 2:
            raise ValueError("TSception needs at least two channels")
        self.kernel_lengths = tuple(max(1, int(w * sample_rate)) for w in self.windows)
        if max(self.kernel_lengths) > n_samples:
            raise ValueError("epoch shorter than the longest temporal kernel")
        self.temporal = nn.ModuleList(
            _tsception_block(1, num_T, (1, k), 1, self.pool) for k in self.kernel_lengths
        )
        half = n_channels // 2
        self.spatial_global = _tsception_block(num_T, num_S, (n_channels, 1), 1, self.pool // 4)
        self.spatial_hemi = _tsception_block(num_T, num_S, (half, 1), (half, 1), self.pool // 4)
        self.fusion = _tsception_block(num_S, num_S, (3, 1), 1, 4)
        self.bn_t = nn.BatchNorm2d(num_T)
        self.bn_s = nn.BatchNorm2d(num_S)
        self.bn_fusion = nn.BatchNorm2d(num_S)
        self.head = nn.Sequential(
            nn.Linear(num_S, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, n_classes)
        )

    def forward(self, x):
        x = x[:, None]
        out = self.bn_t(torch.cat([t(x) for t in self.temporal], dim=-1))
        out = self.bn_s(torch.cat([self.spatial_global(out), self.spatial_hemi(out)], dim=2))
        out = self.bn_fusion(self.fusion(out))
        return self.head(out.mean(dim=-1).flatten(1))


# --------------------------------------------------------------------------- estimators


class FlattenEpochs(TransformerMixin, BaseEstimator):
    """(N, C, L) -> (N, C*L)."""

    def fit(self, X, y=None):
        X = check_epochs(X)
        self.epoch_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "epoch_shape_")
        X = check_epochs(X, self.epoch_shape_)
        return X.reshape(len(X), -1)


def make_svm(C: float = 1.0, gamma="scale", random_state=None) -> Pipeline:
    """Flatten, standardize, RBF-kernel SVM with scikit-learn defaults."""
    return Pipeline(
        [
            ("flatten", FlattenEpochs()),
            ("scale", StandardScaler()),
            ("svc", SVC(kernel="rbf", C=C, gamma=gamma, random_state=random_state)),
        ]
    )


class _TorchEEGClassifier(ClassifierMixin, BaseEstimator):
    def _build(self, n_channels: int, n_samples: int) -> nn.Module:
        raise NotImplementedError

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_epochs_labels(X, y)
        self.classes_ = np.array([0, 1])
        self.epoch_shape_ = X.shape[1:]
        rng = np.random.default_rng(self.random_state)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(rng.integers(2**62)))
            self.module_ = self._build(*self.epoch_shape_)
            self._train(X, y, X_val, y_val, rng)
        return self

    def _train(self, X, y, X_val, y_val, rng):
        net = self.module_
        opt = torch.optim.Adam(net.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        loss_fn = nn.CrossEntropyLoss()
        Xt = torch.from_numpy(X)
        yt = torch.from_numpy(y)
        has_val = X_val is not None
        if has_val:
            X_val, y_val = check_epochs_labels(X_val, y_val, self.epoch_shape_)
        best_score, best_state = -np.inf, None
        self.history_ = []
        for epoch in range(self.epochs):
            net.train()
            order = rng.permutation(len(X))
            total = 0.0
            for s in range(0, len(order), self.batch_size):
                idx = order[s : s + self.batch_size]
                if len(idx) < 2:
                    continue  # batch norm needs two samples
                loss = loss_fn(net(Xt[idx]), yt[idx])
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite loss in epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            record = {"epoch": epoch + 1, "loss": total / len(X)}
            if has_val:
                score = balanced_accuracy_score(y_val, self._predict(X_val))
                record["val_balanced_accuracy"] = score
                if score > best_score:
                    best_score = score
                    best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
            self.history_.append(record)
        if best_state is not None:
            net.load_state_dict(best_state)
        net.eval()

    def _logits(self, X) -> np.ndarray:
        net = self.module_
        net.eval()
        with torch.no_grad():
            return torch.cat(
                [net(torch.from_numpy(X[s : s + 512])) for s in range(0, len(X), 512)]
            ).numpy()

    def _predict(self, X):
        return self._logits(X).argmax(axis=1)

    def predict_proba(self, X):
        check_is_fitted(self, "module_")
        X = check_epochs(X, self.epoch_shape_)
        logits = self._logits(X)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "module_")
        return self._predict(check_epochs(X, self.epoch_shape_))


class EEGNetClassifier(_TorchEEGClassifier):
    def __init__(
        self,
        sample_rate: float = 128.0,
        F1: int = 8,
        D: int = 2,
        F2: int = 16,
        dropout: float = 0.5,
        epochs: int = 100,
        batch_size: int = 16,
        lr: float = 1e-4,
        weight_decay: float = 0.0,
        random_state=None,
    ):
        self.sample_rate = sample_rate
        self.F1 = F1
        self.D = D
        self.F2 = F2
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _build(self, n_channels, n_samples):
        return EEGNet(
            n_channels,
            n_samples,
            kernel_length=max(2, int(self.sample_rate // 2)),
            F1=self.F1,
            D=self.D,
            F2=self.F2,
            dropout=self.dropout,
        )


class TSceptionClassifier(_TorchEEGClassifier):
    def __init__(
        self,
        sample_rate: float = 128.0,
        num_T: int = 15,
        num_S: int = 15,
        hidden: int = 32,
        dropout: float = 0.5,
        epochs: int = 100,
        batch_size: int = 16,
        lr: float = 1e-4,
        weight_decay: float = 0.0,
        random_state=None,
    ):
        self.sample_rate = sample_rate
        self.num_T = num_T
        self.num_S = num_S
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _build(self, n_channels, n_samples):
        return TSception(
            n_channels,
            n_samples,
            self.sample_rate,
            num_T=self.num_T,
            num_S=self.num_S,
            hidden=self.hidden,
            dropout=self.dropout,
        )


# --------------------------------------------------------------------------- protocol


@dataclass
class ClassifierSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}; choose from {KINDS}")
        build_classifier(self)  # validates hyperparameter names

    def to_dict(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters)}


def build_classifier(spec: ClassifierSpec, random_state=None, sample_rate: float | None = None):
    """Untrained estimator for ``spec``; deep kinds default to 100 epochs, batch 16, lr 1e-4."""
    params = dict(spec.hyperparameters)
    if spec.kind == "svm_rbf":
        return make_svm(random_state=random_state, **params)
    if sample_rate is not None:
        params.setdefault("sample_rate", sample_rate)
    cls = EEGNetClassifier if spec.kind == "eegnet" else TSceptionClassifier
    est = cls()
    unknown = set(params) - set(est.get_params())
    if unknown:
        raise ValueError(f"unknown {spec.kind} hyperparameters: {sorted(unknown)}")
    return est.set_params(random_state=random_state, **params)


def train_and_eval(
    spec: ClassifierSpec,
    train_set,
    test_set,
    seed: int = 0,
    val_set=None,
    extra_train=None,
    sample_rate: float | None = None,
) -> dict:
    """Fit on ``train_set`` (+ ``extra_train``) and score on ``test_set``.

    Sets are ``(X, y)`` pairs.  Returns accuracy and balanced accuracy in
    percent.  An empty or ``None`` ``extra_train`` gives exactly the real-only
    result.
    """
    X, y = check_epochs_labels(*train_set)
    if extra_train is not None and len(extra_train[0]):
        Xe, ye = check_epochs_labels(*extra_train, epoch_shape=X.shape[1:])
        X = np.concatenate([X, Xe])
        y = np.concatenate([y, ye])
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    X_test, y_test = check_epochs_labels(*test_set, epoch_shape=X.shape[1:])
    model = build_classifier(spec, random_state=seed, sample_rate=sample_rate)
    if spec.kind != "svm_rbf" and val_set is not None:
        model.fit(X, y, X_val=val_set[0], y_val=val_set[1])
    else:
        model.fit(X, y)
    pred = model.predict(X_test)
    return {
        "accuracy": 100.0 * accuracy_score(y_test, pred),
        "balanced_accuracy": 100.0 * balanced_accuracy_score(y_test, pred),
    }


def ci95(values) -> float:
    """Half-width 1.96 * s / sqrt(k) with s the sample standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return 0.0
    return float(Z95 * v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class FoldReport:
    fold_accuracies: list[float]
    baseline_mean: float | None = None
    fold_balanced_accuracies: list[float] | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def ci95(self) -> float:
        return ci95(self.fold_accuracies)

    @property
    def gain(self) -> float | None:
        if self.baseline_mean is None:
            return None
        return self.mean - self.baseline_mean

    def with_baseline(self, baseline: "FoldReport | float") -> "FoldReport":
        b = baseline.mean if isinstance(baseline, FoldReport) else float(baseline)
        return FoldReport(list(self.fold_accuracies), b, self.fold_balanced_accuracies)

    def to_dict(self) -> dict:
        return {
            "fold_accuracies": list(self.fold_accuracies),
            "mean": self.mean,
            "ci95": self.ci95,
            "baseline_mean": self.baseline_mean,
            "gain": self.gain,
        }


def stratified_folds(labels, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    labels = check_binary_labels(labels)
    counts = np.bincount(labels, minlength=2)
    if k < 2:
        raise ValueError("k must be at least 2")
    if counts.min() < k:
        raise ValueError(f"each class needs at least k={k} epochs, got counts {counts.tolist()}")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return list(skf.split(np.zeros(len(labels)), labels))


AugmentFn = Callable[[np.ndarray, np.random.Generator], "tuple[np.ndarray, np.ndarray] | None"]


def crossval_evaluate(
    spec: ClassifierSpec,
    X,
    y,
    k: int = 5,
    seed: int = 0,
    test_set=None,
    augment: AugmentFn | None = None,
    metric: str = "balanced_accuracy",
    sample_rate: float | None = None,
    records: list | None = None,
) -> FoldReport:
    """Stratified k-fold evaluation.

    With ``test_set`` every fold model is scored on that fixed held-out set
    and its held-out fold serves as validation data; otherwise the held-out
    fold is the test set.  ``augment(train_idx, rng)`` may return extra
    ``(X, y)`` training data for a fold.  Per-fold metrics are appended to
    ``records`` when given.
    """
    X, y = check_epochs_labels(X, y)
    folds = stratified_folds(y, k, seed)
    accs, baccs = [], []
    for fold, (tr, ho) in enumerate(folds):
        rng = np.random.default_rng([seed, fold])
        extra = augment(tr, rng) if augment is not None else None
        if test_set is not None:
            result = train_and_eval(
                spec, (X[tr], y[tr]), test_set, seed=seed * 1000 + fold,
                val_set=(X[ho], y[ho]), extra_train=extra, sample_rate=sample_rate,
            )
        else:
            result = train_and_eval(
                spec, (X[tr], y[tr]), (X[ho], y[ho]), seed=seed * 1000 + fold,
                extra_train=extra, sample_rate=sample_rate,
            )
        accs.append(result["accuracy"])
        baccs.append(result["balanced_accuracy"])
        if records is not None:
            records.append({"fold": fold, **result})
    primary = baccs if metric == "balanced_accuracy" else accs
    return FoldReport(primary, fold_balanced_accuracies=baccs)
