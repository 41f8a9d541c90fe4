from __future__ import annotations

import math

import numpy as np
import pytest

from homodyne_cooling.control import (
    BufferUnderflow,
    DelayBuffer,
    FeedbackConfig,
    FeedbackController,
    FeedForwardPlan,
    StepSchedule,
    delayed_lookup,
    estimate_oscillation,
    feed_forward_schedule,
    feedback_power,
)
from homodyne_cooling.gaussian_core import CovarianceBlockA, MechMoments
from homodyne_cooling.noise import SilentNoise
from homodyne_cooling.params import reference_params
from homodyne_cooling.trajectory import TrajectoryState, run

CLASSICAL = reference_params(eta=0.0)
PERIOD = 2 * math.pi / CLASSICAL.omega


def test_plan_timing():
    plan = FeedForwardPlan(1e-6, CLASSICAL.omega)
    assert plan.duration_half == math.pi / CLASSICAL.omega
    assert plan.t_full_on == pytest.approx(1.5e-6)
    sched = feed_forward_schedule(plan)
    assert sched(0.0) == 0.0
    assert sched(0.999e-6) == 0.0
    assert sched(1e-6) == 0.5
    assert sched(1.49e-6) == 0.5
    assert sched(1.5e-6) == 1.0
    assert sched(1.0) == 1.0


def test_step_schedule():
    assert StepSchedule(None)(5.0) == 0.0
    s = StepSchedule(2.0)
    assert (s(1.9), s(2.0)) == (0.0, 1.0)


def _residual(schedule, t_end=4e-6):
    p = CLASSICAL.with_(gamma=0.0)
    tr = run(TrajectoryState.thermal(p), p, schedule, t_end, SilentNoise(), detect_from=None,
             stride=10)
    after = tr.t >= 2e-6
    return np.max(np.hypot(tr.mean_x[after] - p.x_rest, tr.mean_p[after])), p.x_rest


def test_feed_forward_leaves_oscillator_at_rest():
    res, x_rest = _residual(feed_forward_schedule(FeedForwardPlan(1e-6, CLASSICAL.omega)))
    assert x_rest == pytest.approx(604.1, rel=1e-3)
    assert res < 0.01 * x_rest


def test_abrupt_switch_rings():
    res, x_rest = _residual(StepSchedule(1e-6))
    assert res == pytest.approx(x_rest, rel=1e-3)


def test_estimate_oscillation_examples():
    assert estimate_oscillation(MechMoments(105.0, 0.0), 100.0) == (5.0, 0.0)
    amp, ph = estimate_oscillation(MechMoments(100.0, -3.0), 100.0)
    assert amp == 3.0 and ph == pytest.approx(-math.pi / 2)
    assert estimate_oscillation(MechMoments(100.0, 0.0), 100.0) == (0.0, 0.0)


def test_feedback_power_examples():
    cfg = FeedbackConfig(gain=0.002, delay=0.0)
    w = CLASSICAL.omega
    assert feedback_power((0.0, 1.2), cfg, 3e-6, w) == 0.0
    # gain * amplitude = 0.5 is clipped to the cap
    t = 0.25 * PERIOD
    assert feedback_power((250.0, 0.0), cfg, t, w, t_est=0.0) == pytest.approx(0.1)
    ts = np.linspace(0.0, PERIOD, 101)
    m = feedback_power((250.0, 0.4), cfg, ts, w, t_est=0.0)
    assert np.max(np.abs(m)) <= 0.1


def test_feedback_config_validation():
    for bad in ({"eps_max": 0.2}, {"eps_max": -0.01}, {"delay": -1e-9}, {"gain": -1.0}):
        with pytest.raises(ValueError):
            FeedbackConfig(**bad)


def test_delay_buffer_lookup():
    buf = DelayBuffer(1e-6)
    for i in range(2001):
        t = i * 1e-9
        buf.push(t, 3.0 + 2e6 * t, -7.0)
    now = 2e-6
    assert delayed_lookup(buf, now, 0.0).mean_x == pytest.approx(3.0 + 2e6 * now)
    got = delayed_lookup(buf, now, 0.3333e-6)
    assert got.mean_x == pytest.approx(3.0 + 2e6 * (now - 0.3333e-6), rel=1e-12)
    assert got.mean_p == -7.0
    with pytest.raises(BufferUnderflow):
        delayed_lookup(buf, now, 1.5e-6)
    with pytest.raises(BufferUnderflow):
        buf.lookup(now + 1e-9)
    with pytest.raises(ValueError):
        buf.push(now, 0.0, 0.0)


def _closed_loop(delay, compensate=True, phase_offset=0.0, duration=30e-6, amp=300.0):
    cfg = FeedbackConfig(delay=delay, enabled_from=0.0, compensate_delay=compensate,
                         phase_offset=phase_offset)
    ctl = FeedbackController(cfg, CLASSICAL)
    init = TrajectoryState(0.0, MechMoments(CLASSICAL.x_rest + amp, 0.0),
                           CovarianceBlockA.thermal(CLASSICAL.nbar))
    tr = run(init, CLASSICAL, StepSchedule(0.0), duration, SilentNoise(), controller=ctl,
             detect_from=None, stride=10)
    a = np.hypot(tr.mean_x - CLASSICAL.x_rest, tr.mean_p)
    per = int(round(PERIOD / (10 * CLASSICAL.dt)))
    env = np.array([a[i:i + per].max() for i in range(0, len(a) - per + 1, per)])
    return env, ctl, tr


def test_feedback_damps_and_flipped_phase_excites():
    env, _, _ = _closed_loop(0.0, duration=2e-6)
    flipped, _, _ = _closed_loop(0.0, phase_offset=math.pi, duration=2e-6)
    assert env[1] < env[0]
    assert flipped[1] > flipped[0]


@pytest.mark.parametrize("delay", [0.0, 0.25e-6, 0.5e-6, 1e-6])
def test_loop_stable_for_delays_up_to_one_microsecond(delay):
    env, ctl, tr = _closed_loop(delay)
    assert np.all(np.diff(env[5:]) <= 1e-9)
    assert env[-1] < 0.01
    assert ctl.max_abs_modulation <= 0.1
    total = tr.power
    assert np.all(total >= 0.0) and np.all(total <= 1.1)


def test_uncompensated_delay_settles_into_limit_cycle():
    env, _, _ = _closed_loop(1e-6, compensate=False)
    assert env[-1] > 100.0
    assert abs(env[-1] - env[-5]) < 0.01 * env[-1]


def test_disabled_feedback_leaves_plan_untouched(ref):
    plan = feed_forward_schedule(FeedForwardPlan(1e-6, ref.omega))
    cfg = FeedbackConfig(enabled_from=1.0)
    ctl = FeedbackController(cfg, ref)
    tr = run(TrajectoryState.thermal(ref), ref, plan, 3e-6, SilentNoise(), controller=ctl)
    np.testing.assert_array_equal(tr.power, [plan(t) for t in tr.t])
    assert np.all(tr.modulation == 0.0)


def test_controller_handles_ensembles():
    ctl = FeedbackController(FeedbackConfig(delay=0.0, enabled_from=0.0), CLASSICAL)
    x = CLASSICAL.x_rest + np.array([0.0, 100.0, -400.0])
    m = ctl.step(0.0, x, np.zeros(3), 1.0)
    assert m.shape == (3,)
    assert m[0] == 0.0
    assert np.all(np.abs(m) <= 0.1)


def test_modulation_never_drives_power_negative():
    ctl = FeedbackController(FeedbackConfig(delay=0.0, enabled_from=0.0), CLASSICAL)
    t = 0.25 * PERIOD
    m = ctl.step(t, CLASSICAL.x_rest * 0.05 + 1000.0, 0.0, 0.05)
    assert 0.05 + m >= 0.0
