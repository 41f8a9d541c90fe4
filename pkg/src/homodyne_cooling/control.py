"""Probe-power control: feed-forward ramp and delayed feedback."""

from __future__ import annotations

import bisect
import cmath
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .gaussian_core import MechMoments
from .params import SimParams
from .trajectory import drift_rate

EPS_MAX_CAP = 0.1


@dataclass(frozen=True)
class FeedForwardPlan:
    """Half power for half an oscillation period, then full power."""

    t_half_on: float
    omega: float

    @property
    def duration_half(self) -> float:
        return math.pi / self.omega

    @property
    def t_full_on(self) -> float:
        return self.t_half_on + self.duration_half


class FeedForwardSchedule:
    def __init__(self, plan: FeedForwardPlan):
        self.plan = plan
        self._t1 = plan.t_half_on
        self._t2 = plan.t_full_on

    def __call__(self, t: float) -> float:
        if t < self._t1:
            return 0.0
        if t < self._t2:
            return 0.5
        return 1.0


class StepSchedule:
    """Probe off, then full power from `t_on` (None keeps it off)."""

    def __init__(self, t_on: Optional[float]):
        self.t_on = t_on

    def __call__(self, t: float) -> float:
        return 0.0 if self.t_on is None or t < self.t_on else 1.0


def feed_forward_schedule(plan: FeedForwardPlan) -> FeedForwardSchedule:
    return FeedForwardSchedule(plan)


@dataclass(frozen=True)
class FeedbackConfig:
    """Feedback loop settings.

    Attributes:
        gain: modulation depth per x0 of oscillation amplitude.
        eps_max: cap on the relative power modulation.
        delay: loop latency (s).
        enabled_from: activation time (s).
        compensate_delay: propagate the delayed estimate through the
            modulation already sent during the latency window.
        phase_offset: extra phase added to the drive; pi turns damping into
            anti-damping (used as a negative control).
    """

    gain: float = 0.002
    eps_max: float = EPS_MAX_CAP
    delay: float = 1.0e-6
    enabled_from: float = 10.0e-6
    compensate_delay: bool = True
    phase_offset: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eps_max <= EPS_MAX_CAP:
            raise ValueError(f"eps_max must lie in [0, {EPS_MAX_CAP}], got {self.eps_max}")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        if self.gain < 0:
            raise ValueError("gain must be >= 0")


class BufferUnderflow(LookupError):
    """Requested a sample older than the delay buffer holds."""


class DelayBuffer:
    """Recent (t, <X>, <P>) samples with linear interpolation in time."""

    def __init__(self, depth: float):
        self.depth = depth
        self._t: list = []
        self._x: list = []
        self._p: list = []
        self._start = 0

    def push(self, t: float, mean_x, mean_p):
        if self._t and t <= self._t[-1]:
            raise ValueError("delay buffer times must increase")
        self._t.append(t)
        self._x.append(mean_x)
        self._p.append(mean_p)
        while self._start < len(self._t) - 1 and self._t[self._start + 1] < t - self.depth:
            self._start += 1
        if self._start > 4096:
            del self._t[: self._start], self._x[: self._start], self._p[: self._start]
            self._start = 0

    @property
    def oldest(self) -> float:
        return self._t[self._start]

    def lookup(self, t: float) -> MechMoments:
        if not self._t or t < self._t[self._start] or t > self._t[-1]:
            raise BufferUnderflow(f"no sample covering t={t!r}")
        i = bisect.bisect_left(self._t, t, lo=self._start)
        if self._t[i] == t:
            return MechMoments(self._x[i], self._p[i])
        t0, t1 = self._t[i - 1], self._t[i]
        f = (t - t0) / (t1 - t0)
        return MechMoments(
            self._x[i - 1] + f * (self._x[i] - self._x[i - 1]),
            self._p[i - 1] + f * (self._p[i] - self._p[i - 1]),
        )


def delayed_lookup(buffer: DelayBuffer, t: float, delay: float) -> MechMoments:
    return buffer.lookup(t - delay)


def estimate_oscillation(moments: MechMoments, x_rest: float):
    """Amplitude and phase of the mean motion about `x_rest`.

    Phase is atan2(<P>, <X> - x_rest), which is 0 at zero amplitude.
    """
    dx = moments.mean_x - x_rest
    q = moments.mean_p
    return np.hypot(dx, q), np.arctan2(q, dx)


def feedback_power(estimate: Tuple, cfg: FeedbackConfig, t: float, omega: float,
                   t_est: Optional[float] = None):
    """Relative power modulation at time `t`.

    `estimate` is (amplitude, phase) of the oscillation at `t_est`
    (default ``t - cfg.delay``). The phase is carried forward by free rotation
    so that the resulting force opposes the momentum at `t`.
    """
    amp, phase = estimate
    if t_est is None:
        t_est = t - cfg.delay
    depth = np.clip(cfg.gain * amp, 0.0, cfg.eps_max)
    return depth * np.sin(omega * (t - t_est) - phase + cfg.phase_offset)


class FeedbackController:
    """Delayed, saturated proportional feedback on the probe power.

    Called once per integration step with the current conditional means. The
    loop only sees means older than `cfg.delay`. With delay compensation the
    controller also rotates forward the response to the modulation it has sent
    during the latency window (it knows its own commands), which keeps the
    loop stable when gain x delay is large.
    """

    def __init__(self, cfg: FeedbackConfig, params: SimParams):
        self.cfg = cfg
        self.params = params
        dt = params.dt
        self.buffer = DelayBuffer(cfg.delay + 2 * dt)
        self._n = int(round(cfg.delay / dt))
        self._rot = cmath.exp(-1j * params.omega * dt)
        self._rot_n = self._rot ** self._n
        self._u_hist: deque = deque()
        self._window = 0j
        self.max_abs_modulation = 0.0

    def _push_command(self, m):
        u = (1.0 - self._rot) * drift_rate(self.params, np.atleast_1d(m)) / self.params.omega
        self._window = self._rot * self._window + u
        self._u_hist.append(u)
        if len(self._u_hist) > self._n:
            self._window = self._window - self._rot_n * self._u_hist.popleft()

    def step(self, t: float, mean_x, mean_p, p_base: float):
        self.buffer.push(t, mean_x, mean_p)
        cfg = self.cfg
        m = 0.0
        t_est = t - cfg.delay
        if t >= cfg.enabled_from and p_base > 0 and t_est >= self.buffer.oldest:
            x_rest = drift_rate(self.params, p_base) / self.params.omega
            old = delayed_lookup(self.buffer, t, cfg.delay)
            # Always evaluate on arrays: numpy's vectorised transcendental loops
            # can differ from the scalar ones in the last bit, and a single run
            # must match the same member of an ensemble run exactly.
            old = MechMoments(np.atleast_1d(old.mean_x), np.atleast_1d(old.mean_p))
            if cfg.compensate_delay:
                z = ((old.mean_x - x_rest) + 1j * old.mean_p) * self._rot_n + self._window
                est = MechMoments(x_rest + np.real(z), np.imag(z))
                m = feedback_power(estimate_oscillation(est, x_rest), cfg, t,
                                   self.params.omega, t_est=t)
            else:
                m = feedback_power(estimate_oscillation(old, x_rest), cfg, t,
                                   self.params.omega)
            m = np.maximum(m, -p_base)
            if not isinstance(mean_x, np.ndarray):
                m = float(m[0])
            self.max_abs_modulation = max(self.max_abs_modulation, float(np.max(np.abs(m))))
        self._push_command(m)
        return m
