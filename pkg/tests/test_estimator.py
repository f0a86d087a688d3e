import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from eegdiff.estimator import DiffusionAugmenter, GaussianNoiseAugmenter

TINY = dict(
    train_steps=20,
    warmup_steps=5,
    batch_size=8,
    base_width=8,
    channel_multipliers=(1, 2),
    blocks_per_stage=1,
    gamma_embed_dim=16,
    dropout=0.0,
    inference_steps=5,
)


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((24, 2, 16)).astype(np.float32)
    y = np.arange(24) % 2
    return DiffusionAugmenter(delta=0.01, **TINY).fit(X), X, y


def test_get_params_and_clone():
    aug = DiffusionAugmenter(delta=0.05, **TINY)
    assert aug.get_params()["delta"] == 0.05
    twin = clone(aug)
    assert twin.get_params() == aug.get_params()
    with pytest.raises(NotFittedError):
        twin.transform(np.zeros((1, 2, 16)))


def test_fit_records_loss_curve(fitted):
    aug, X, _ = fitted
    assert aug.loss_curve_.shape == (20,)
    assert aug.epoch_shape_ == (2, 16)


def test_sample_inherits_labels_and_is_reproducible(fitted):
    aug, X, y = fitted
    Xs, ys, src = aug.sample(X, y, 10, seed=3)
    assert Xs.shape == (10, 2, 16) and Xs.dtype == np.float32
    assert np.array_equal(ys, y[src])
    again, _, src2 = aug.sample(X, y, 10, seed=3)
    assert np.array_equal(src, src2) and np.array_equal(Xs, again)


def test_generation_does_not_depend_on_batching(fitted):
    aug, X, _ = fitted
    a = aug.set_params(generation_batch=4).generate_from(X[:6], seed=1)
    b = aug.set_params(generation_batch=512).generate_from(X[:6], seed=1)
    assert np.allclose(a, b, atol=1e-5)


def test_fit_resample_sizes(fitted):
    aug, X, y = fitted
    Xr, yr = aug.fit_resample(X, y, mix_percent=50)
    assert len(Xr) == 36 and len(yr) == 36
    assert np.array_equal(Xr[:24], X)
    X0, y0 = aug.fit_resample(X, y, mix_percent=0)
    assert len(X0) == 24


def test_input_validation(fitted):
    aug, X, y = fitted
    with pytest.raises(ValueError):
        aug.transform(np.zeros((2, 3, 16)))
    with pytest.raises(ValueError):
        aug.sample(X, y[:-1], 3)
    with pytest.raises(ValueError):
        DiffusionAugmenter(delta=-1, **TINY).fit(X)
    with pytest.raises(ValueError):
        DiffusionAugmenter(**TINY).fit(np.full((4, 2, 16), np.nan))


def test_checkpoint_round_trip(tmp_path):
    X = np.random.default_rng(0).standard_normal((8, 2, 16)).astype(np.float32)
    aug = DiffusionAugmenter(**TINY).fit(X, checkpoint_dir=tmp_path / "ck")
    back = DiffusionAugmenter.from_checkpoint(tmp_path / "ck", delta=0.0, inference_steps=5)
    assert back.base_width == 8 and back.T == 500
    assert np.array_equal(aug.set_params(delta=0.0).transform(X[:2]), back.transform(X[:2]))


def test_noise_augmenter_moments_and_priors():
    X = np.zeros((400, 2, 16), np.float32)
    y = np.r_[np.zeros(300, int), np.ones(100, int)]
    aug = GaussianNoiseAugmenter(random_state=0).fit(X, y)
    Xn, yn = aug.sample(4000)
    assert abs(Xn.mean()) < 0.01 and abs(Xn.var() - 1) < 0.01
    assert abs(yn.mean() - 0.25) < 0.03
    Xr, yr = aug.fit_resample(X, y, mix_percent=100)
    assert len(Xr) == 800
