"""Conditional diffusion mathematics on EEG epochs.

Every function works on numpy arrays; the ones that call a denoiser also
accept torch tensors so the training loss stays differentiable.  Epochs are
``(C, L)`` grids or ``(N, C, L)`` stacks.  Randomness always comes from an
explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .schedule import NoiseSchedule

Denoiser = Callable[..., np.ndarray]


class NonFiniteError(FloatingPointError):
    """A denoiser or loss produced NaN or infinity."""


def _is_torch(a) -> bool:
    return type(a).__module__.startswith("torch")


def _all_finite(a) -> bool:
    if _is_torch(a):
        import torch

        return bool(torch.isfinite(a).all())
    return bool(np.all(np.isfinite(a)))


def _sqrt(v):
    if np.isscalar(v):
        return math.sqrt(v)
    if _is_torch(v):
        return v.sqrt()
    return np.sqrt(v)


def _expand(v, like):
    """Broadcast a per-epoch scalar array against a stack of epochs."""
    if np.isscalar(v) or like.ndim < 3:
        return v
    if _is_torch(v):
        return v.reshape(-1, *([1] * (like.ndim - 1)))
    return np.asarray(v).reshape(-1, *([1] * (like.ndim - 1)))


def _check_same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


@dataclass(frozen=True)
class ConditionPair:
    source: np.ndarray
    target: np.ndarray
    label: int
    delta: float = 0.0

    def __post_init__(self):
        _check_same_shape(self.source, self.target, "condition pair")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass(frozen=True)
class DiffusionTrainingItem:
    """One denoising example; ``y_tilde`` is built from ``(y0, gamma, epsilon)``."""

    x_delta: np.ndarray
    y_tilde: np.ndarray
    gamma: float | np.ndarray
    epsilon: np.ndarray


def forward_marginal(y0, gamma, epsilon):
    """Noisy target sqrt(gamma) * y0 + sqrt(1 - gamma) * epsilon.

    ``gamma`` is a scalar or one level per epoch of a stack.
    """
    _check_same_shape(y0, epsilon, "forward_marginal")
    g = gamma if _is_torch(gamma) else np.asarray(gamma, dtype=np.float64)
    if not _is_torch(g) and (np.any(g < 0) or np.any(g > 1)):
        raise ValueError("gamma must lie in [0, 1]")
    if not _is_torch(g) and g.ndim == 0:
        g = float(g)
    g = _expand(g, y0)
    return _sqrt(g) * y0 + _sqrt(1.0 - g) * epsilon


def make_training_item(y0, x, gamma, epsilon, delta: float = 0.0, rng=None, z=None):
    x_delta = augment_condition(x, delta, rng, noise=z)
    return DiffusionTrainingItem(
        x_delta=x_delta,
        y_tilde=forward_marginal(y0, gamma, epsilon),
        gamma=gamma,
        epsilon=epsilon,
    )


def posterior_params(y0, yt, t: int, schedule: NoiseSchedule):
    """Mean and variance of q(y_{t-1} | y_0, y_t)."""
    _check_same_shape(y0, yt, "posterior_params")
    alpha_t = schedule.alpha_at(t)
    g_t = schedule.gamma_at(t)
    g_prev = schedule.gamma_at(t - 1)
    denom = 1.0 - g_t
    if denom <= 0.0:
        raise ValueError(f"degenerate posterior at t={t}: 1 - gamma_t = {denom}")
    mu = (math.sqrt(g_prev) * (1.0 - alpha_t) / denom) * y0 + (
        math.sqrt(alpha_t) * (1.0 - g_prev) / denom
    ) * yt
    sigma2 = (1.0 - g_prev) * (1.0 - alpha_t) / denom
    return mu, sigma2


def augment_condition(x, delta: float, rng: np.random.Generator | None, noise=None):
    """Perturbed condition x + delta * Z with Z ~ N(0, I).

    ``noise`` substitutes a fixed Z; otherwise Z is drawn from ``rng``.
    ``delta == 0`` returns ``x`` unchanged without consuming randomness.
    """
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if delta == 0:
        return x
    if noise is None:
        if rng is None:
            raise ValueError("augment_condition needs rng or noise when delta > 0")
        noise = rng.standard_normal(np.shape(x))
        if not _is_torch(x):
            noise = noise.astype(np.asarray(x).dtype, copy=False)
    _check_same_shape(x, noise, "augment_condition")
    return x + delta * noise


def training_loss(denoiser: Denoiser, item: DiffusionTrainingItem, p: int = 2):
    """Mean over all elements of |f(x_delta, y_tilde, gamma) - epsilon| ** p."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    eps_hat = denoiser(item.x_delta, item.y_tilde, item.gamma)
    if not _all_finite(eps_hat):
        raise NonFiniteError("denoiser output is not finite")
    residual = eps_hat - item.epsilon
    loss = abs(residual).mean() if p == 1 else (residual * residual).mean()
    if not _all_finite(loss):
        raise NonFiniteError("training loss is not finite")
    return loss


def estimate_y0(yt, eps_hat, gamma_t):
    """Invert the forward marginal given a noise estimate."""
    g = np.asarray(gamma_t, dtype=np.float64) if not _is_torch(gamma_t) else gamma_t
    if not _is_torch(g):
        if np.any(g <= 0) or np.any(g > 1):
            raise ValueError("gamma_t must lie in (0, 1]")
        if g.ndim == 0:
            g = float(g)
    g = _expand(g, yt)
    return (yt - _sqrt(1.0 - g) * eps_hat) / _sqrt(g)


def refinement_step(
    denoiser: Denoiser,
    x_delta,
    yt,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    noise=None,
):
    """One reverse step y_t -> y_{t-1}.

    The additive noise sqrt(1 - alpha_t) * eps_t is omitted at t = 1, so the
    last step returns the mean.  ``noise`` substitutes a fixed eps_t.
    """
    alpha_t = schedule.alpha_at(t)
    g_t = schedule.gamma_at(t)
    gamma_in = g_t if np.ndim(yt) < 3 else np.full(len(yt), g_t)
    eps_hat = denoiser(x_delta, yt, gamma_in)
    if not _all_finite(eps_hat):
        raise NonFiniteError(f"denoiser output is not finite at t={t}")
    mean = (yt - ((1.0 - alpha_t) / math.sqrt(1.0 - g_t)) * eps_hat) / math.sqrt(alpha_t)
    if t == 1:
        return mean
    if noise is None:
        if rng is None:
            raise ValueError("refinement_step needs rng or noise for t > 1")
        noise = rng.standard_normal(np.shape(yt)).astype(np.asarray(yt).dtype, copy=False)
    return mean + math.sqrt(1.0 - alpha_t) * noise


def _rngs_for(rng, n):
    if isinstance(rng, np.random.Generator):
        return [rng] * n if n == 1 else list(rng.spawn(n))
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError(f"need {n} random streams, got {len(rngs)}")
    return rngs


def _draw(rngs, shape, dtype):
    return np.stack([r.standard_normal(shape) for r in rngs]).astype(dtype, copy=False)


def generate(
    denoiser: Denoiser,
    x,
    delta: float,
    schedule: NoiseSchedule,
    steps: int | None = None,
    rng: np.random.Generator | Sequence[np.random.Generator] | None = None,
    expected_shape: tuple[int, int] | None = None,
):
    """Run the conditional reverse process from y_T ~ N(0, I).

    ``x`` is one epoch ``(C, L)`` or a stack ``(N, C, L)``.  For a stack,
    ``rng`` may be a sequence with one generator per epoch, which makes each
    output independent of batch composition.  ``steps`` below ``schedule.T``
    samples on a regridded schedule.  The condition x_delta is drawn once per
    epoch and held fixed along the chain.
    """
    if steps is None:
        steps = schedule.T
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if rng is None:
        raise ValueError("generate needs an explicit random source")
    x = np.asarray(x)
    single = x.ndim == 2
    if x.ndim not in (2, 3):
        raise ValueError(f"expected (C, L) or (N, C, L) epochs, got shape {x.shape}")
    if expected_shape is not None and tuple(x.shape[-2:]) != tuple(expected_shape):
        raise ValueError(f"epoch shape {x.shape[-2:]} != model shape {tuple(expected_shape)}")
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    xs = x[None] if single else x
    rngs = _rngs_for(rng, len(xs))
    sched = schedule.subsample(steps)
    epoch_shape = xs.shape[1:]

    yt = _draw(rngs, epoch_shape, dtype)
    if delta > 0:
        z = _draw(rngs, epoch_shape, dtype)
        x_delta = augment_condition(xs.astype(dtype, copy=False), delta, None, noise=z)
    else:
        x_delta = augment_condition(xs.astype(dtype, copy=False), delta, None)
    for t in range(sched.T, 0, -1):
        noise = _draw(rngs, epoch_shape, dtype) if t > 1 else None
        yt = refinement_step(denoiser, x_delta, yt, t, sched, noise=noise)
    return yt[0] if single else yt


def epoch_seed(global_seed: int, index: int) -> int:
    """Stable per-epoch seed, independent of worker count or batch layout."""
    digest = hashlib.sha256(f"{int(global_seed)}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def epoch_rngs(global_seed: int, indices) -> list[np.random.Generator]:
    return [np.random.default_rng(epoch_seed(global_seed, i)) for i in indices]
