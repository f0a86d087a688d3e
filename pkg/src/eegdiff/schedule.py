"""Discrete noise schedules and the piece-wise uniform noise-level sampler.

Conventions: step ``t`` runs over ``1..T``; ``alpha[t-1]`` holds alpha_t and
``gamma[t-1]`` holds gamma_t = alpha_1 * ... * alpha_t.  ``gamma_0`` is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T = 500
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_MAX_TERMINAL_GAMMA = 0.01


class ScheduleError(ValueError):
    """Raised for schedules that cannot drive the diffusion process."""


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray
    gamma: np.ndarray = field(repr=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if alpha.ndim != 1 or alpha.size == 0:
            raise ScheduleError("alpha must be a non-empty 1-D sequence")
        if gamma.shape != alpha.shape:
            raise ScheduleError("alpha and gamma lengths differ")
        if not np.all((alpha > 0) & (alpha < 1)):
            raise ScheduleError("every alpha_t must lie in (0, 1)")
        if not np.all(np.diff(np.concatenate([[1.0], gamma])) < 0):
            raise ScheduleError("gamma must be strictly decreasing (underflow?)")
        alpha.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def from_alpha(cls, alpha) -> "NoiseSchedule":
        alpha = np.asarray(alpha, dtype=np.float64)
        return cls(alpha=alpha, gamma=np.cumprod(alpha))

    @classmethod
    def from_gamma(cls, gamma) -> "NoiseSchedule":
        """Build a schedule whose cumulative levels are exactly ``gamma``."""
        gamma = np.asarray(gamma, dtype=np.float64)
        prev = np.concatenate([[1.0], gamma[:-1]])
        return cls(alpha=gamma / prev, gamma=gamma)

    @property
    def T(self) -> int:
        return int(self.alpha.size)

    def gamma_at(self, t: int) -> float:
        """gamma_t with the gamma_0 = 1 convention."""
        if not 0 <= t <= self.T:
            raise IndexError(f"step {t} outside 0..{self.T}")
        return 1.0 if t == 0 else float(self.gamma[t - 1])

    def alpha_at(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise IndexError(f"step {t} outside 1..{self.T}")
        return float(self.alpha[t - 1])

    def subsample(self, steps: int) -> "NoiseSchedule":
        """Coarser schedule on ``steps`` evenly spaced gridpoints of this one.

        The terminal level gamma_T is kept, so sampling can still start from
        pure noise.  Valid because the denoiser is conditioned on gamma, not t.
        """
        if not 1 <= steps <= self.T:
            raise ScheduleError(f"steps must be in 1..{self.T}, got {steps}")
        if steps == self.T:
            return self
        idx = np.unique(np.round(np.linspace(0, self.T - 1, steps + 1)[1:]).astype(int))
        if idx.size != steps:
            raise ScheduleError(f"cannot regrid {self.T} steps onto {steps}")
        return NoiseSchedule.from_gamma(self.gamma[idx])

    def to_dict(self) -> dict:
        return {"T": self.T, "alpha": self.alpha.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls.from_alpha(d["alpha"])


def build_linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    max_terminal_gamma: float | None = DEFAULT_MAX_TERMINAL_GAMMA,
) -> NoiseSchedule:
    """Linear beta schedule, alpha_t = 1 - beta_t.

    ``max_terminal_gamma`` rejects schedules that leave too much signal at
    step T for sampling to start from N(0, I); pass ``None`` to disable.
    """
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start < 1 and 0 < beta_end < 1):
        raise ScheduleError("beta endpoints must lie in (0, 1)")
    if beta_start > beta_end:
        raise ScheduleError("beta_start must not exceed beta_end")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    schedule = NoiseSchedule.from_alpha(1.0 - betas)
    if max_terminal_gamma is not None and schedule.gamma[-1] > max_terminal_gamma:
        raise ScheduleError(
            f"gamma_T = {schedule.gamma[-1]:.4g} exceeds the terminal ceiling "
            f"{max_terminal_gamma}; raise beta_end or T"
        )
    return schedule


def sample_gamma(schedule: NoiseSchedule, rng: np.random.Generator, size=None):
    """Draw ``(gamma, t)`` from the piece-wise uniform noise-level distribution.

    t is uniform on {1..T}; gamma is uniform on (gamma_t, gamma_{t-1}).  With
    ``size`` the draws are arrays.
    """
    t = rng.integers(1, schedule.T + 1, size=size)
    upper = np.concatenate([[1.0], schedule.gamma])
    lo = schedule.gamma[t - 1]
    hi = upper[t - 1]
    gamma = rng.uniform(lo, hi)
    gamma = np.where(hi > lo, gamma, lo)
    if size is None:
        return float(gamma), int(t)
    return gamma, t
