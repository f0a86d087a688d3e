import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegdiff.schedule import NoiseSchedule, ScheduleError, build_linear_schedule, sample_gamma


def test_default_schedule_shape_and_endpoints():
    s = build_linear_schedule()
    assert s.T == 500
    assert s.alpha[0] == pytest.approx(1 - 1e-4)
    assert s.alpha[-1] == pytest.approx(1 - 0.02)
    assert s.gamma_at(0) == 1.0
    assert s.gamma_at(1) == s.alpha[0]
    assert s.gamma[-1] < 0.01


def test_t100_schedule_fails_terminal_ceiling_by_default():
    # 100 steps of this beta range leave gamma_T near 0.36
    with pytest.raises(ScheduleError, match="terminal"):
        build_linear_schedule(T=100)
    s = build_linear_schedule(T=100, max_terminal_gamma=None)
    assert 0.3 < s.gamma[-1] < 0.4


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=0),
        dict(T=2.5),
        dict(beta_start=0.0),
        dict(beta_end=1.0),
        dict(beta_start=0.03, beta_end=0.02),
    ],
)
def test_invalid_schedules_rejected(kwargs):
    with pytest.raises(ScheduleError):
        build_linear_schedule(**kwargs)


def test_underflow_is_detected():
    with pytest.raises(ScheduleError, match="strictly decreasing"):
        NoiseSchedule.from_alpha(np.full(2000, 0.5))


def test_schedule_is_read_only():
    s = build_linear_schedule()
    with pytest.raises(ValueError):
        s.gamma[0] = 0.5


def test_round_trip_through_json():
    s = build_linear_schedule(T=400, beta_end=0.03)
    back = NoiseSchedule.from_dict(json.loads(json.dumps(s.to_dict())))
    assert np.array_equal(back.alpha, s.alpha)
    assert np.array_equal(back.gamma, s.gamma)


@settings(max_examples=40, deadline=None)
@given(
    T=st.integers(1, 600),
    b0=st.floats(1e-6, 0.05),
    width=st.floats(0.0, 0.2),
)
def test_gamma_is_cumulative_product(T, b0, width):
    s = build_linear_schedule(T, b0, min(b0 + width, 0.5), max_terminal_gamma=None)
    assert np.array_equal(s.gamma, np.cumprod(s.alpha))
    assert np.all(np.diff(s.gamma) < 0)


@settings(max_examples=30, deadline=None)
@given(steps=st.integers(1, 500))
def test_subsample_keeps_terminal_level(steps):
    s = build_linear_schedule()
    sub = s.subsample(steps)
    assert sub.T == steps
    assert sub.gamma[-1] == s.gamma[-1]
    assert set(sub.gamma.tolist()) <= set(s.gamma.tolist())


def test_subsample_out_of_range():
    s = build_linear_schedule()
    with pytest.raises(ScheduleError):
        s.subsample(0)
    with pytest.raises(ScheduleError):
        s.subsample(501)


def test_sample_gamma_within_interval():
    s = build_linear_schedule()
    rng = np.random.default_rng(0)
    gamma, t = sample_gamma(s, rng, size=20000)
    upper = np.concatenate([[1.0], s.gamma])
    assert np.all(gamma >= s.gamma[t - 1])
    assert np.all(gamma <= upper[t - 1])
    assert t.min() == 1 and t.max() == s.T
    # t is uniform: each step ~40 hits
    counts = np.bincount(t, minlength=s.T + 1)[1:]
    assert counts.min() > 10


def test_sample_gamma_scalar_is_reproducible():
    s = build_linear_schedule()
    a = sample_gamma(s, np.random.default_rng(3))
    b = sample_gamma(s, np.random.default_rng(3))
    assert a == b
    assert isinstance(a[0], float) and isinstance(a[1], int)

