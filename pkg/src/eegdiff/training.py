"""Denoiser training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .diffusion import (
    DiffusionTrainingItem,
    NonFiniteError,
    augment_condition,
    forward_marginal,
    training_loss,
)
from .schedule import NoiseSchedule, sample_gamma
from .unet import Denoiser, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainOptions:
    steps: int = 1_000_000
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    warmup_steps: int = 10_000
    loss_p: int = 2
    delta: float = 0.0
    checkpoint_every: int = 0
    log_every: int = 100

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainState:
    """Everything needed to continue a run bit-for-bit."""

    step: int
    losses: list[tuple[int, float]]
    optimizer: dict | None = None
    scheduler: dict | None = None
    rng: dict | None = None


def _warmup(warmup_steps: int):
    def factor(step: int) -> float:
        if warmup_steps <= 0:
            return 1.0
        return min(1.0, (step + 1) / warmup_steps)

    return factor


def train_denoiser(
    model: Denoiser,
    epochs: np.ndarray,
    schedule: NoiseSchedule,
    opts: TrainOptions | None = None,
    rng: np.random.Generator | int | None = 0,
    checkpoint_dir: str | Path | None = None,
    resume: TrainState | None = None,
    meta: dict | None = None,
) -> tuple[Denoiser, TrainState]:
    """Fit the denoiser on self-paired real epochs.

    Each item uses one epoch as both the diffusion target and the condition.
    Returns the model (trained in place) and the run state, whose ``losses``
    holds one ``(step, loss)`` pair per step.  ``resume`` continues a run
    restored by :func:`load_training_run`.
    """
    opts = opts or TrainOptions()
    epochs = np.asarray(epochs, dtype=np.float32)
    if epochs.ndim != 3 or len(epochs) == 0:
        raise ValueError("need a non-empty (N, C, L) stack of epochs")
    if tuple(epochs.shape[1:]) != model.epoch_shape:
        raise ValueError(f"epochs {epochs.shape[1:]} do not match model {model.epoch_shape}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    net = model.net
    dtype = next(net.parameters()).dtype
    optimizer = torch.optim.Adam(net.parameters(), lr=opts.lr, betas=tuple(opts.betas))
    lr_sched = torch.optim.lr_scheduler.LambdaLR(optimizer, _warmup(opts.warmup_steps))
    state = TrainState(step=0, losses=[])
    if resume is not None:
        state = TrainState(step=resume.step, losses=list(resume.losses))
        if resume.optimizer:
            optimizer.load_state_dict(resume.optimizer)
        if resume.scheduler:
            lr_sched.load_state_dict(resume.scheduler)
        if resume.rng:
            rng.bit_generator.state = resume.rng

    net.train()
    batch = min(opts.batch_size, len(epochs))
    while state.step < opts.steps:
        idx = rng.integers(0, len(epochs), size=batch)
        y0 = epochs[idx]
        gamma, _ = sample_gamma(schedule, rng, size=batch)
        eps = rng.standard_normal(y0.shape).astype(np.float32)
        x_delta = augment_condition(y0, opts.delta, rng)
        item = DiffusionTrainingItem(
            x_delta=torch.as_tensor(x_delta, dtype=dtype),
            y_tilde=torch.as_tensor(forward_marginal(y0, gamma, eps), dtype=dtype),
            gamma=torch.as_tensor(gamma, dtype=dtype),
            epsilon=torch.as_tensor(eps, dtype=dtype),
        )
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(rng.integers(2**62)))
            try:
                loss = training_loss(model, item, p=opts.loss_p)
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"diverged at step {state.step}: {exc}") from exc
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
        optimizer.step()
        lr_sched.step()
        state.step += 1
        state.losses.append((state.step, loss.item()))
        if opts.log_every and state.step % opts.log_every == 0:
            log.info("step %d loss %.5f lr %.2e", state.step, loss.item(), lr_sched.get_last_lr()[0])
        if checkpoint_dir and opts.checkpoint_every and state.step % opts.checkpoint_every == 0:
            _snapshot(checkpoint_dir, model, schedule, opts, state, optimizer, lr_sched, rng, meta)

    state.optimizer = optimizer.state_dict()
    state.scheduler = lr_sched.state_dict()
    state.rng = rng.bit_generator.state
    if checkpoint_dir:
        _snapshot(checkpoint_dir, model, schedule, opts, state, optimizer, lr_sched, rng, meta)
    net.eval()
    return model, state


def _snapshot(path, model, schedule, opts, state, optimizer, lr_sched, rng, meta):
    save_checkpoint(
        path,
        model,
        meta={
            "schedule": schedule.to_dict(),
            "train_options": opts.to_dict(),
            "step": state.step,
            **(meta or {}),
        },
        extra={
            "optimizer": optimizer.state_dict(),
            "scheduler": lr_sched.state_dict(),
            "rng": rng.bit_generator.state,
        },
    )
    write_loss_curve(Path(path) / "loss.csv", state.losses)


def write_loss_curve(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in losses:
            w.writerow([step, repr(float(loss))])


def read_loss_curve(path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]


def load_training_run(path) -> tuple[Denoiser, NoiseSchedule, TrainState, dict]:
    """Restore model, schedule and resumable state from a checkpoint directory."""
    model, sidecar, blob = load_checkpoint(path)
    schedule = NoiseSchedule.from_dict(sidecar["schedule"])
    curve = Path(path) / "loss.csv"
    losses = read_loss_curve(curve) if curve.exists() else []
    state = TrainState(
        step=int(sidecar.get("step", 0)),
        losses=losses,
        optimizer=blob.get("optimizer"),
        scheduler=blob.get("scheduler"),
        rng=blob.get("rng"),
    )
    return model, schedule, state, sidecar
