import numpy as np
import pytest
import torch

from eegdiff.schedule import build_linear_schedule
from eegdiff.training import (
    TrainingDivergedError,
    TrainOptions,
    load_training_run,
    read_loss_curve,
    train_denoiser,
)
from eegdiff.unet import build_denoiser


@pytest.fixture
def epochs():
    t = np.arange(16) / 16
    rng = np.random.default_rng(0)
    phase = rng.uniform(0, 2 * np.pi, (64, 2, 1))
    return np.sin(2 * np.pi * 3 * t + phase).astype(np.float32)


def _params(model):
    return torch.cat([p.detach().flatten() for p in model.net.parameters()])


def test_loss_decreases(tiny_config, epochs):
    model = build_denoiser(tiny_config, (2, 16), seed=0)
    opts = TrainOptions(steps=300, batch_size=16, warmup_steps=20, log_every=0)
    _, state = train_denoiser(model, epochs, build_linear_schedule(), opts, rng=0)
    losses = np.array([loss for _, loss in state.losses])
    assert len(losses) == 300
    assert losses[-50:].mean() < 0.5 * losses[:20].mean()
    assert not model.net.training


def test_warmup_ramps_learning_rate(tiny_config, epochs):
    model = build_denoiser(tiny_config, (2, 16), seed=0)
    opts = TrainOptions(steps=5, batch_size=4, lr=1e-3, warmup_steps=10, log_every=0)
    _, state = train_denoiser(model, epochs, build_linear_schedule(), opts, rng=0)
    assert state.scheduler["_last_lr"][0] == pytest.approx(1e-3 * 6 / 10)


def test_resume_is_bit_identical(tmp_path, tiny_config, epochs):
    schedule = build_linear_schedule()
    straight = build_denoiser(tiny_config, (2, 16), seed=0)
    train_denoiser(straight, epochs, schedule,
                   TrainOptions(steps=12, batch_size=8, warmup_steps=4, log_every=0), rng=1)

    first = build_denoiser(tiny_config, (2, 16), seed=0)
    train_denoiser(first, epochs, schedule,
                   TrainOptions(steps=6, batch_size=8, warmup_steps=4, log_every=0), rng=1,
                   checkpoint_dir=tmp_path / "run")
    model, sched2, state, sidecar = load_training_run(tmp_path / "run")
    assert state.step == 6 and len(state.losses) == 6
    assert np.array_equal(sched2.gamma, schedule.gamma)
    _, state = train_denoiser(model, epochs, sched2,
                              TrainOptions(steps=12, batch_size=8, warmup_steps=4, log_every=0),
                              rng=1, checkpoint_dir=tmp_path / "run", resume=state)
    assert state.step == 12
    assert torch.equal(_params(model), _params(straight))
    assert [s for s, _ in read_loss_curve(tmp_path / "run" / "loss.csv")] == list(range(1, 13))


def test_periodic_checkpoints(tmp_path, tiny_config, epochs):
    model = build_denoiser(tiny_config, (2, 16), seed=0)
    opts = TrainOptions(steps=4, batch_size=4, checkpoint_every=2, log_every=0)
    train_denoiser(model, epochs, build_linear_schedule(), opts, checkpoint_dir=tmp_path / "c",
                   meta={"note": "x"})
    _, _, state, sidecar = load_training_run(tmp_path / "c")
    assert state.step == 4 and sidecar["note"] == "x"
    assert sidecar["train_options"]["checkpoint_every"] == 2


def test_divergence_is_reported(tiny_config, epochs):
    model = build_denoiser(tiny_config, (2, 16), seed=0)
    bad = epochs.copy()
    bad[:] = np.inf
    with pytest.raises(TrainingDivergedError):
        train_denoiser(model, bad, build_linear_schedule(),
                       TrainOptions(steps=2, batch_size=4, log_every=0))


def test_input_validation(tiny_config, epochs):
    model = build_denoiser(tiny_config, (2, 16), seed=0)
    with pytest.raises(ValueError):
        train_denoiser(model, epochs[:, :, :8], build_linear_schedule(), TrainOptions(steps=1))
    with pytest.raises(ValueError):
        train_denoiser(model, epochs[:0], build_linear_schedule(), TrainOptions(steps=1))


def test_training_with_condition_noise_and_l1(tiny_config, epochs):
    model = build_denoiser(tiny_config, (2, 16), seed=0)
    opts = TrainOptions(steps=3, batch_size=4, loss_p=1, delta=0.05, log_every=1)
    _, state = train_denoiser(model, epochs, build_linear_schedule(), opts)
    assert all(np.isfinite(loss) for _, loss in state.losses)
