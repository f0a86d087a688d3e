"""scikit-learn style front end for diffusion-based epoch augmentation."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .diffusion import epoch_rngs, epoch_seed, generate
from .schedule import build_linear_schedule
from .training import TrainOptions, load_training_run, train_denoiser
from .unet import DenoiserConfig, build_denoiser
from .validation import check_binary_labels, check_epochs


def _n_from_percent(n_real: int, percent: float) -> int:
    return int(round(n_real * percent / 100.0))


class DiffusionAugmenter(BaseEstimator):
    """Learns a conditional denoiser on real epochs and samples look-alikes.

    ``fit`` trains the noise-prediction U-Net on ``X`` with each epoch
    serving as its own condition.  ``sample`` draws conditions uniformly with
    replacement, perturbs them by ``delta`` times standard normal noise and
    runs the reverse process; synthetic epochs inherit the condition's label.

    Parameters mirror the training and sampling configuration; see
    :class:`~eegdiff.training.TrainOptions` and
    :class:`~eegdiff.unet.DenoiserConfig` for their meaning.
    """

    def __init__(
        self,
        delta: float = 0.01,
        T: int = 500,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        max_terminal_gamma: float | None = 0.01,
        inference_steps: int | None = None,
        train_steps: int = 1_000_000,
        batch_size: int = 32,
        lr: float = 1e-3,
        warmup_steps: int = 10_000,
        loss_p: int = 2,
        train_delta: float = 0.0,
        base_width: int = 32,
        channel_multipliers: tuple[int, ...] = (1, 2, 4, 8),
        blocks_per_stage: int = 2,
        attention_resolution: int = 16,
        dropout: float = 0.2,
        gamma_embed_dim: int = 128,
        generation_batch: int = 512,
        random_state: int = 0,
    ):
        self.delta = delta
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.max_terminal_gamma = max_terminal_gamma
        self.inference_steps = inference_steps
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.loss_p = loss_p
        self.train_delta = train_delta
        self.base_width = base_width
        self.channel_multipliers = channel_multipliers
        self.blocks_per_stage = blocks_per_stage
        self.attention_resolution = attention_resolution
        self.dropout = dropout
        self.gamma_embed_dim = gamma_embed_dim
        self.generation_batch = generation_batch
        self.random_state = random_state

    def _denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            base_width=self.base_width,
            channel_multipliers=tuple(self.channel_multipliers),
            blocks_per_stage=self.blocks_per_stage,
            attention_resolution=self.attention_resolution,
            dropout=self.dropout,
            gamma_embed_dim=self.gamma_embed_dim,
        )

    def _train_options(self) -> TrainOptions:
        return TrainOptions(
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.lr,
            warmup_steps=self.warmup_steps,
            loss_p=self.loss_p,
            delta=self.train_delta,
            log_every=0,
        )

    def fit(self, X, y=None, checkpoint_dir=None):
        X = check_epochs(X)
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        self.schedule_ = build_linear_schedule(
            self.T, self.beta_start, self.beta_end, self.max_terminal_gamma
        )
        self.epoch_shape_ = X.shape[1:]
        model = build_denoiser(self._denoiser_config(), self.epoch_shape_, seed=self.random_state)
        self.denoiser_, state = train_denoiser(
            model,
            X,
            self.schedule_,
            self._train_options(),
            rng=np.random.default_rng(self.random_state),
            checkpoint_dir=checkpoint_dir,
            meta={"seed": self.random_state},
        )
        self.loss_curve_ = np.array([loss for _, loss in state.losses])
        return self

    @classmethod
    def from_checkpoint(cls, path, **params) -> "DiffusionAugmenter":
        """Augmenter around an already trained checkpoint directory."""
        model, schedule, state, sidecar = load_training_run(path)
        cfg = model.config
        aug = cls(
            T=schedule.T,
            base_width=cfg.base_width,
            channel_multipliers=cfg.channel_multipliers,
            blocks_per_stage=cfg.blocks_per_stage,
            attention_resolution=cfg.attention_resolution,
            dropout=cfg.dropout,
            gamma_embed_dim=cfg.gamma_embed_dim,
            random_state=sidecar.get("seed", 0),
            **params,
        )
        aug.schedule_ = schedule
        aug.denoiser_ = model
        aug.epoch_shape_ = model.epoch_shape
        aug.loss_curve_ = np.array([loss for _, loss in state.losses])
        aug.checkpoint_path_ = str(Path(path))
        return aug

    def generate_from(self, conditions, seed: int | None = None, first_index: int = 0) -> np.ndarray:
        """One synthetic epoch per condition; epoch ``i`` uses stream ``(seed, first_index + i)``."""
        check_is_fitted(self, "denoiser_")
        conditions = check_epochs(conditions, self.epoch_shape_, name="conditions")
        seed = self.random_state if seed is None else seed
        out = np.empty_like(conditions)
        step = max(1, int(self.generation_batch))
        for s in range(0, len(conditions), step):
            chunk = conditions[s : s + step]
            rngs = epoch_rngs(seed, range(first_index + s, first_index + s + len(chunk)))
            out[s : s + len(chunk)] = generate(
                self.denoiser_,
                chunk,
                self.delta,
                self.schedule_,
                steps=self.inference_steps,
                rng=rngs,
                expected_shape=self.epoch_shape_,
            )
        return out

    def transform(self, X):
        """Synthetic counterpart of every epoch in ``X``."""
        return self.generate_from(X)

    def sample(self, X, y, n_samples: int, seed: int | None = None):
        """``n_samples`` synthetic epochs conditioned on epochs drawn with replacement.

        Returns ``(X_syn, y_syn, source_index)`` where ``source_index`` points
        into ``X``.
        """
        X = check_epochs(X, getattr(self, "epoch_shape_", None))
        y = check_binary_labels(y, len(X))
        seed = self.random_state if seed is None else seed
        pick = np.random.default_rng(epoch_seed(seed, -1))
        source = pick.integers(0, len(X), size=int(n_samples))
        X_syn = self.generate_from(X[source], seed=seed)
        return X_syn, y[source], source

    def fit_resample(self, X, y, mix_percent: float = 100.0, seed: int | None = None):
        """Real epochs followed by ``mix_percent``% as many synthetic ones."""
        if not hasattr(self, "denoiser_"):
            self.fit(X, y)
        X = check_epochs(X)
        y = check_binary_labels(y, len(X))
        n = _n_from_percent(len(X), mix_percent)
        if n == 0:
            return X, y
        X_syn, y_syn, _ = self.sample(X, y, n, seed=seed)
        return np.concatenate([X, X_syn]), np.concatenate([y, y_syn])


class GaussianNoiseAugmenter(BaseEstimator):
    """Negative control: standard-normal "epochs" with labels drawn at the real class priors."""

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X, y):
        X = check_epochs(X)
        y = check_binary_labels(y, len(X))
        self.epoch_shape_ = X.shape[1:]
        self.class_prior_ = np.bincount(y, minlength=2) / len(y)
        return self

    def sample(self, n_samples: int, seed: int | None = None):
        check_is_fitted(self, "class_prior_")
        rng = np.random.default_rng(self.random_state if seed is None else seed)
        y = rng.choice(2, size=int(n_samples), p=self.class_prior_)
        X = rng.standard_normal((int(n_samples), *self.epoch_shape_)).astype(np.float32)
        return X, y

    def fit_resample(self, X, y, mix_percent: float = 100.0, seed: int | None = None):
        self.fit(X, y)
        X = check_epochs(X)
        n = _n_from_percent(len(X), mix_percent)
        if n == 0:
            return X, np.asarray(y)
        Xn, yn = self.sample(n, seed)
        return np.concatenate([X, Xn]), np.concatenate([np.asarray(y), yn])
