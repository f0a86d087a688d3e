import numpy as np
import pytest
import torch
from sklearn.base import clone

from eegdiff.classifiers import (
    EEGNet,
    ClassifierSpec,
    EEGNetClassifier,
    FoldReport,
    TSception,
    TSceptionClassifier,
    build_classifier,
    ci95,
    crossval_evaluate,
    make_svm,
    stratified_folds,
    train_and_eval,
)


@pytest.fixture
def easy():
    """Class 0 at 2 Hz, class 1 at 5 Hz, little noise."""
    rng = np.random.default_rng(0)
    n, t = 120, np.arange(32) / 32
    y = np.arange(n) % 2
    f = np.where(y == 0, 2.0, 5.0)[:, None, None]
    X = np.sin(2 * np.pi * f * t + rng.uniform(0, 6.3, (n, 1, 1))) + 0.3 * rng.standard_normal((n, 2, 32))
    return X.astype(np.float32), y


def test_ci95_known_value():
    assert ci95([60, 62, 61, 63, 64]) == pytest.approx(1.386, abs=5e-4)
    assert ci95([70.0]) == 0.0


def test_fold_report_gain():
    r = FoldReport([70, 72, 74])
    assert r.gain is None
    assert r.with_baseline(70.0).gain == pytest.approx(2.0)
    assert r.with_baseline(FoldReport([71, 71])).gain == pytest.approx(1.0)
    d = r.with_baseline(70.0).to_dict()
    assert d["mean"] == 72 and d["gain"] == 2


def test_network_output_shapes():
    x = torch.randn(3, 32, 128)
    assert EEGNet(32, 128, kernel_length=64)(x).shape == (3, 2)
    ts = TSception(32, 128, 128)
    assert ts.kernel_lengths == (64, 32, 16)
    assert ts(x).shape == (3, 2)
    with pytest.raises(ValueError):
        TSception(1, 128, 128)
    with pytest.raises(ValueError):
        TSception(2, 32, 128)


def test_specs_validate_hyperparameters():
    with pytest.raises(ValueError):
        ClassifierSpec("lda")
    with pytest.raises(ValueError):
        ClassifierSpec("eegnet", {"depth": 3})
    est = build_classifier(ClassifierSpec("tsception", {"epochs": 3}), random_state=1, sample_rate=64)
    assert isinstance(est, TSceptionClassifier)
    assert est.get_params()["epochs"] == 3 and est.sample_rate == 64
    assert build_classifier(ClassifierSpec("svm_rbf")).named_steps["svc"].kernel == "rbf"


def test_estimators_follow_sklearn_conventions():
    est = EEGNetClassifier(epochs=2, random_state=0)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "module_")


def test_svm_learns_easy_task(easy):
    X, y = easy
    model = make_svm().fit(X[:80], y[:80])
    assert (model.predict(X[80:]) == y[80:]).mean() > 0.9


@pytest.mark.parametrize("cls", [EEGNetClassifier, TSceptionClassifier])
def test_torch_classifiers_learn_and_are_deterministic(easy, cls):
    X, y = easy
    kw = dict(sample_rate=32, epochs=30, lr=3e-3, random_state=0)
    a = cls(**kw).fit(X[:80], y[:80])
    b = cls(**kw).fit(X[:80], y[:80])
    assert (a.predict(X[80:]) == y[80:]).mean() > 0.8
    assert np.array_equal(a.predict_proba(X[80:]), b.predict_proba(X[80:]))
    p = a.predict_proba(X[80:])
    assert np.allclose(p.sum(axis=1), 1)


def test_validation_selection_records_history(easy):
    X, y = easy
    est = EEGNetClassifier(sample_rate=32, epochs=5, lr=3e-3, random_state=0)
    est.fit(X[:80], y[:80], X_val=X[80:100], y_val=y[80:100])
    assert len(est.history_) == 5
    assert "val_balanced_accuracy" in est.history_[0]


def test_predict_validates_input(easy):
    X, y = easy
    est = EEGNetClassifier(sample_rate=32, epochs=1, random_state=0).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :1])
    with pytest.raises(ValueError):
        est.fit(X, y + 2)


def test_train_and_eval_empty_extra_equals_real_only(easy):
    X, y = easy
    spec = ClassifierSpec("svm_rbf")
    a = train_and_eval(spec, (X[:80], y[:80]), (X[80:], y[80:]))
    b = train_and_eval(spec, (X[:80], y[:80]), (X[80:], y[80:]), extra_train=(X[:0], y[:0]))
    assert a == b
    assert 0 <= a["balanced_accuracy"] <= 100


def test_train_and_eval_needs_both_classes(easy):
    X, y = easy
    with pytest.raises(ValueError):
        train_and_eval(ClassifierSpec("svm_rbf"), (X[y == 0], y[y == 0]), (X, y))


def test_stratified_folds_partition():
    y = np.array([0] * 30 + [1] * 20)
    folds = stratified_folds(y, 5, seed=0)
    held = np.concatenate([ho for _, ho in folds])
    assert sorted(held.tolist()) == list(range(50))
    for tr, ho in folds:
        assert y[ho].sum() == 4
    with pytest.raises(ValueError):
        stratified_folds(np.array([0] * 10 + [1] * 3), 5)


def test_crossval_records_and_augmentation(easy):
    X, y = easy
    seen = []

    def augment(train_idx, rng):
        seen.append(len(train_idx))
        return X[train_idx][:10], y[train_idx][:10]

    records = []
    report = crossval_evaluate(ClassifierSpec("svm_rbf"), X, y, k=4, augment=augment,
                               metric="accuracy", records=records)
    assert len(report.fold_accuracies) == 4 and len(records) == 4
    assert seen == [90] * 4
    assert report.mean > 80
    assert [r["fold"] for r in records] == [0, 1, 2, 3]
