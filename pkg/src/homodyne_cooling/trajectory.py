"""Continuous-limit integrator for the conditional oscillator state.

The covariance obeys a deterministic Riccati equation; the means pick up
Gaussian innovations from the homodyne record. Both are advanced with a fixed
step: the free rotation is applied exactly (about the displaced rest point for
the means), the measurement term in Kalman-update form (exact Gaussian
conditioning on the step's record) and everything else by an explicit Euler /
Euler-Maruyama step. ``exact_rotation=False`` gives plain Euler-Maruyama on the
whole system instead.

All state arithmetic is written so that means (and, when the feedback also
modulates the measurement rate, covariances) may be numpy arrays holding one
entry per trajectory. A single trajectory uses plain floats; an ensemble run
produces bit-identical rows for each member.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .gaussian_core import EPS_TOL, CovarianceBlockA, CovarianceError, MechMoments
from .params import SimParams

# E[dW^2] / dt for the innovation increments.
INNOVATION_VARIANCE = 0.5

PowerSchedule = Callable[[float], float]


def _sqrt(v):
    return np.sqrt(v) if isinstance(v, np.ndarray) else math.sqrt(v)


@dataclass
class TrajectoryState:
    t: float
    moments: MechMoments
    cov: CovarianceBlockA

    @classmethod
    def thermal(cls, params: SimParams, t: float = 0.0) -> "TrajectoryState":
        """Bath equilibrium centred at the origin."""
        return cls(t, MechMoments(0.0, 0.0), CovarianceBlockA.thermal(params.nbar))


def constant_power(p: float) -> PowerSchedule:
    if p < 0:
        raise ValueError("power fraction must be >= 0")
    return lambda t: p


def covariance_derivative(A: CovarianceBlockA, params: SimParams, p: float,
                          eta: Optional[float] = None,
                          rotation: bool = True) -> CovarianceBlockA:
    """Time derivative of the mechanical covariance block.

    `p` scales the full-power measurement rate; `eta` defaults to
    ``params.eta``. With ``rotation=False`` the omega terms are left out (the
    engine applies the rotation exactly instead).
    """
    eta = params.eta if eta is None else eta
    k2 = p * params.kappa_sq
    g = params.gamma
    th = params.thermal_variance
    a11, a12, a21, a22 = A.a11, A.a12, A.a21, A.a22
    d11 = -eta * k2 * a11 * a11 - g * (a11 - th)
    d12 = -eta * k2 * a11 * a12 - g * a12
    d21 = -eta * k2 * a11 * a21 - g * a21
    d22 = k2 - eta * k2 * a12 * a21 - g * (a22 - th)
    if rotation:
        w = params.omega
        d11 = d11 + w * (a21 + a12)
        d12 = d12 - w * (a11 - a22)
        d21 = d21 - w * (a11 - a22)
        d22 = d22 - w * (a21 + a12)
    return CovarianceBlockA(d11, d12, d21, d22)


def drift_rate(params: SimParams, p) -> float:
    """Probe-induced momentum drift 2 k Phi p (p0 per second)."""
    return 2.0 * params.k * params.phi * p


def mean_derivative(moments: MechMoments, params: SimParams, p):
    """Deterministic part of d<X>/dt and d<P>/dt."""
    x, q = moments.mean_x, moments.mean_p
    g2 = 0.5 * params.gamma
    dx = params.omega * q - g2 * x
    dq = -params.omega * x - g2 * q + drift_rate(params, p)
    return dx, dq


def stochastic_mean_update(moments: MechMoments, A: CovarianceBlockA, params: SimParams,
                           p, dW, eta: Optional[float] = None) -> MechMoments:
    """Innovation kick sqrt(eta) kappa(t) (a11, a21) dW on the means."""
    eta = params.eta if eta is None else eta
    gain = math.sqrt(eta) * _sqrt(p * params.kappa_sq) * dW
    return MechMoments(moments.mean_x + A.a11 * gain, moments.mean_p + A.a21 * gain)


@dataclass
class Trajectory:
    """Sampled output of :func:`run`.

    Arrays have one row per sampled step; ensemble runs add a trailing
    trajectory axis to quantities that differ between members.
    """

    t: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    power: np.ndarray
    modulation: np.ndarray
    seeds: tuple = field(default_factory=tuple)

    @property
    def n_eff(self) -> np.ndarray:
        return 0.25 * (self.a11 + self.a22) - 0.5

    @property
    def det(self) -> np.ndarray:
        return self.a11 * self.a22 - self.a12 * self.a12

    def member(self, i: int) -> "Trajectory":
        """Slice one trajectory out of an ensemble result."""
        def pick(a):
            return a[:, i] if a.ndim == 2 else a
        return Trajectory(self.t, pick(self.mean_x), pick(self.mean_p), pick(self.a11),
                          pick(self.a12), pick(self.a22), pick(self.power),
                          pick(self.modulation))

    def final_state(self) -> TrajectoryState:
        return TrajectoryState(
            float(self.t[-1]),
            MechMoments(self.mean_x[-1], self.mean_p[-1]),
            CovarianceBlockA(self.a11[-1], self.a12[-1], self.a12[-1], self.a22[-1]),
        )


class _Recorder:
    def __init__(self):
        self.rows: List[tuple] = []

    def add(self, *row):
        self.rows.append(row)

    def build(self) -> Trajectory:
        arrs = []
        for col in zip(*self.rows):
            shape = np.broadcast_shapes(*(np.shape(v) for v in col))
            arrs.append(np.array([np.broadcast_to(v, shape) for v in col], dtype=float))
        return Trajectory(*arrs)


def _check_cov(t, a11, a12, a22):
    det = a11 * a22 - a12 * a12
    if isinstance(det, np.ndarray):
        bad = not (np.all(a11 > 0) and np.all(a22 > 0) and np.all(det >= 1.0 - EPS_TOL))
    else:
        bad = not (a11 > 0 and a22 > 0 and det >= 1.0 - EPS_TOL)
    if bad:
        raise CovarianceError(
            f"covariance invariant broken at t={t:.9e} s: "
            f"a11={a11!r}, a12={a12!r}, a22={a22!r}, det={det!r}"
        )


def run(initial: TrajectoryState, params: SimParams, schedule: PowerSchedule,
        duration: float, noise, controller=None, detect_from: Optional[float] = 0.0,
        stride: int = 1, exact_rotation: bool = True,
        innovation_variance: float = INNOVATION_VARIANCE) -> Trajectory:
    """Integrate one trajectory (or a lockstep ensemble) for `duration` seconds.

    Args:
        initial: starting state; means may be arrays for an ensemble.
        schedule: base power fraction p(t), queried once per step.
        noise: object with ``normal()`` returning one standard-normal draw
            (or one per trajectory) per call.
        controller: optional object with
            ``step(t, mean_x, mean_p, p_base) -> modulation``.
        detect_from: time the homodyne detection starts; None disables it.
        stride: record every `stride`-th step (the initial state is always kept).
        innovation_variance: E[dW^2]/dt; only altered for negative controls.

    Raises:
        CovarianceError: the covariance left the physical set; the message
            carries the offending time.
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    dt = params.dt
    n_steps = int(round(duration / dt))
    t0 = initial.t
    w = params.omega
    g2 = 0.5 * params.gamma
    kappa_sq = params.kappa_sq
    k2_follows = params.kappa_follows_feedback
    sqrt_eta = math.sqrt(params.eta)
    dw_scale = math.sqrt(innovation_variance * dt)
    th = params.thermal_variance
    gam = params.gamma
    c, s = math.cos(w * dt), math.sin(w * dt)
    cc, ss, cs = c * c, s * s, c * s

    x, q = initial.moments.mean_x, initial.moments.mean_p
    A = initial.cov
    a11, a12, a22 = A.a11, 0.5 * (A.a12 + A.a21), A.a22
    _check_cov(t0, a11, a12, a22)

    rec = _Recorder()
    for n in range(n_steps + 1):
        t = t0 + n * dt
        p_base = schedule(t)
        m = controller.step(t, x, q, p_base) if controller is not None else 0.0
        p_tot = p_base + m
        if n % stride == 0 or n == n_steps:
            rec.add(t, x, q, a11, a12, a22, p_tot, m)
        if n == n_steps:
            break

        p_k = p_tot if k2_follows else p_base
        k2 = p_k * kappa_sq
        detecting = detect_from is not None and t >= detect_from
        eta = params.eta if detecting else 0.0

        if exact_rotation:
            r11 = cc * a11 + 2.0 * cs * a12 + ss * a22
            r12 = (cc - ss) * a12 + cs * (a22 - a11)
            r22 = ss * a11 - 2.0 * cs * a12 + cc * a22
            w11 = w12 = w22 = 0.0
            xc = drift_rate(params, p_tot) / w
            dx = x - xc
            x = xc + c * dx + s * q
            q = -s * dx + c * q
            x = x - g2 * x * dt
            q = q - g2 * q * dt
        else:
            r11, r12, r22 = a11, a12, a22
            w11 = 2.0 * w * a12
            w12 = -w * (a11 - a22)
            w22 = -w11
            dx, dq = mean_derivative(MechMoments(x, q), params, p_tot)
            x = x + dx * dt
            q = q + dq * dt

        if exact_rotation:
            # measurement term in Kalman form; equals -eta k2 a a^T dt to first order
            den = 1.0 + eta * k2 * dt * r11
            f = eta * k2 * dt / den
        else:
            den = 1.0
            f = eta * k2 * dt

        if detecting:
            gain = sqrt_eta * _sqrt(k2 / den) * dw_scale * noise.normal()
            x = x + r11 * gain
            q = q + r12 * gain

        a11 = r11 - f * r11 * r11 + dt * (-gam * (r11 - th) + w11)
        a12 = r12 - f * r11 * r12 + dt * (-gam * r12 + w12)
        a22 = r22 - f * r12 * r12 + dt * (k2 - gam * (r22 - th) + w22)
        _check_cov(t + dt, a11, a12, a22)

    return rec.build()
