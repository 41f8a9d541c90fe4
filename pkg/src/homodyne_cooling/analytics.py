"""Closed-form steady states, temperature conversions and cross-checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import constants
from scipy.integrate import odeint, solve_ivp

from . import gaussian_core as gc
from .noise import SilentNoise
from .params import SimParams
from .trajectory import Trajectory, TrajectoryState, constant_power, run


@dataclass
class SteadyStateReport:
    a11_exact: float
    a11_reduced: float
    n_eff: float
    T_eff: float


def steady_state_a11(gamma: float, kappa_sq: float, eta: float, nbar: float) -> float:
    """Measurement-limited steady position variance (positive quadratic root)."""
    if eta <= 0:
        raise ValueError("no measurement-limited steady state without detection (eta = 0)")
    if kappa_sq <= 0:
        raise ValueError("kappa_sq must be > 0")
    ek = eta * kappa_sq
    disc = gamma * gamma + ek * (kappa_sq + 2.0 * gamma * (2.0 * nbar + 1.0))
    return (-gamma + math.sqrt(disc)) / ek


def steady_state_a11_reduced(gamma: float, kappa_sq: float, eta: float, nbar: float) -> float:
    """Steady state for gamma << kappa, (1/sqrt(eta)) sqrt(1 + 2 gamma (2 nbar + 1) / kappa^2)."""
    return math.sqrt(1.0 + 2.0 * gamma / kappa_sq * (2.0 * nbar + 1.0)) / math.sqrt(eta)


def effective_quanta(A: gc.CovarianceBlockA) -> float:
    """Thermal occupation equivalent to the conditional covariance."""
    return 0.25 * (A.a11 + A.a22) - 0.5


def quanta_to_temperature(n_eff: float, omega: float) -> float:
    """Bose-Einstein temperature (K) of a mode with mean occupation `n_eff`."""
    if n_eff < 0:
        raise ValueError("occupation must be >= 0")
    if n_eff == 0:
        return 0.0
    return constants.hbar * omega / (constants.k * math.log1p(1.0 / n_eff))


def temperature_to_nbar(T: float, omega: float) -> float:
    if T <= 0:
        raise ValueError("temperature must be > 0")
    return 1.0 / math.expm1(constants.hbar * omega / (constants.k * T))


def steady_state_report(params: SimParams, eta: Optional[float] = None) -> SteadyStateReport:
    eta = params.eta if eta is None else eta
    a = steady_state_a11(params.gamma, params.kappa_sq, eta, params.nbar)
    n = effective_quanta(gc.CovarianceBlockA(a, 0.0, 0.0, a))
    return SteadyStateReport(
        a11_exact=a,
        a11_reduced=steady_state_a11_reduced(params.gamma, params.kappa_sq, eta, params.nbar),
        n_eff=n,
        T_eff=quanta_to_temperature(n, params.omega),
    )


# -- numerical references --------------------------------------------------


def _riccati_rhs(params: SimParams, p: float, eta: float):
    w, g, th = params.omega, params.gamma, params.thermal_variance
    k2 = p * params.kappa_sq

    def rhs(t, y):
        a11, a12, a21, a22 = y
        return [
            -eta * k2 * a11 * a11 + w * (a21 + a12) - g * (a11 - th),
            -eta * k2 * a11 * a12 - w * (a11 - a22) - g * a12,
            -eta * k2 * a11 * a21 - w * (a11 - a22) - g * a21,
            k2 - eta * k2 * a12 * a21 - w * (a21 + a12) - g * (a22 - th),
        ]

    return rhs


def integrate_riccati(params: SimParams, t_end: float, A0: Optional[gc.CovarianceBlockA] = None,
                      p: float = 1.0, eta: Optional[float] = None, t_eval=None,
                      rtol: float = 1e-10, max_step: Optional[float] = None):
    """High-accuracy solution of the full covariance ODE (scipy DOP853).

    Returns the ``solve_ivp`` result; rows of ``y`` are a11, a12, a21, a22.
    """
    eta = params.eta if eta is None else eta
    A0 = A0 or gc.CovarianceBlockA.thermal(params.nbar)
    y0 = [A0.a11, A0.a12, A0.a21, A0.a22]
    if max_step is None:
        max_step = 0.25 * 2 * math.pi / params.omega
    sol = solve_ivp(_riccati_rhs(params, p, eta), (0.0, t_end), y0, method="DOP853",
                    rtol=rtol, atol=1e-12, t_eval=t_eval, max_step=max_step)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol


def simulated_steady_a11(params: SimParams, eta: Optional[float] = None,
                         tol: float = 1e-6, max_chunks: int = 200) -> float:
    """Fixed point of the full covariance ODE by long-run integration.

    Integrates from the thermal state (LSODA) in chunks until a11 stops moving by more
    than `tol` (relative) over a chunk.
    """
    eta = params.eta if eta is None else eta
    guess = steady_state_a11(params.gamma, params.kappa_sq, eta, params.nbar)
    rate = params.gamma + eta * params.kappa_sq * guess
    rhs = _riccati_rhs(params, 1.0, eta)
    chunk = np.linspace(0.0, 5.0 / rate, 2)
    y = gc.CovarianceBlockA.thermal(params.nbar)
    y = [y.a11, y.a12, y.a21, y.a22]
    prev = y[0]
    for _ in range(max_chunks):
        y = odeint(lambda v, t: rhs(t, v), y, chunk, rtol=1e-10, atol=1e-10,
                   mxstep=10**7)[-1]
        if abs(y[0] - prev) <= tol * abs(y[0]):
            return float(y[0])
        prev = y[0]
    raise RuntimeError("covariance ODE did not converge")


def averaged_steady_a11(gamma: float, kappa_sq: float, eta: float, nbar: float,
                        tol: float = 1e-10) -> float:
    """Fixed point of the rotation-averaged variance equation, by integration.

    With a11 = a22 = a and negligible correlations the mean of the two
    diagonal equations reads da/dt = kappa^2/2 - eta kappa^2 a^2/2 - gamma (a - (2 nbar + 1)).
    """
    th = 2.0 * nbar + 1.0

    def rhs(t, y):
        a = y[0]
        return [0.5 * kappa_sq - 0.5 * eta * kappa_sq * a * a - gamma * (a - th)]

    # relaxation rate is at least gamma and at least ~eta kappa^2 a
    a = th
    scale = gamma + eta * kappa_sq
    for _ in range(400):
        rate = gamma + eta * kappa_sq * max(a, 1.0)
        sol = solve_ivp(rhs, (0.0, 10.0 / max(rate, scale * 1e-12)), [a], method="LSODA",
                        rtol=1e-12, atol=1e-14)
        a_new = float(sol.y[0, -1])
        if abs(a_new - a) <= tol * abs(a_new):
            return a_new
        a = a_new
    raise RuntimeError("averaged variance equation did not converge")


# -- engine cross-checks ---------------------------------------------------


def discrete_covariance_run(params: SimParams, duration: float, tau: float,
                            p: float = 1.0, eta: Optional[float] = None,
                            exact_rotation: bool = True) -> np.ndarray:
    """Covariance history (n+1, 3) of repeated segment steps: a11, a12, a22."""
    eta = params.eta if eta is None else eta
    seg = gc.ProbeSegment.from_params(params, tau, power=p, eta=eta)
    n = int(round(duration / tau))
    state = (gc.MechMoments(0.0, 0.0), gc.CovarianceBlockA.thermal(params.nbar))
    out = np.empty((n + 1, 3))
    noise = SilentNoise()
    for i in range(n + 1):
        A = state[1]
        out[i] = (A.a11, A.a12, A.a22)
        if i < n:
            state = gc.discrete_step(state, seg, params, noise, power=p,
                                     exact_rotation=exact_rotation)
    return out


def engines_agree(params: SimParams, duration: float, tau: Optional[float] = None,
                  p: float = 1.0) -> float:
    """Max over time of max_ij |a_ij(segment engine) - a_ij(continuous engine)| / a11.

    Both engines start thermal with the probe at power fraction `p` and the
    detector on, and step with the same tau.
    """
    tau = params.dt if tau is None else tau
    pr = params.with_(dt=tau)
    disc = discrete_covariance_run(pr, duration, tau, p=p)
    cont = run(TrajectoryState.thermal(pr), pr, constant_power(p), duration, SilentNoise(),
               detect_from=0.0)
    ref = np.column_stack([cont.a11, cont.a12, cont.a22])
    if ref.shape != disc.shape:
        raise RuntimeError("engine sample grids differ")
    return float(np.max(np.max(np.abs(disc - ref), axis=1) / ref[:, 0]))


# -- law of total variance -------------------------------------------------


def jackknife_variance(x: np.ndarray):
    """Unbiased sample variance and its jackknife standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    mean = x.mean()
    dev = x - mean
    ss = np.sum(dev * dev)
    var = ss / (n - 1)
    # leave-one-out variances in closed form
    loo_mean_shift = dev / (n - 1)
    loo_ss = ss - dev * dev - (n - 1) * loo_mean_shift * loo_mean_shift
    loo = loo_ss / (n - 2)
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return var, se


@dataclass
class OracleRow:
    t: float
    reference_a11: float
    ensemble_a11: float
    deviation: float
    se: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.deviation == 0 else math.inf
        return self.deviation / self.se


@dataclass
class OracleReport:
    name: str
    passed: bool
    threshold: float
    rows: List[OracleRow] = field(default_factory=list)

    @property
    def max_abs_z(self) -> float:
        return max((abs(r.z) for r in self.rows), default=0.0)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max |deviation| = {self.max_abs_z:.3f} SE "
                f"(limit {self.threshold:g}) over {len(self.rows)} times")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t_s,reference_a11,ensemble_a11,deviation,se,z\n")
            for r in self.rows:
                fh.write(f"{r.t:.17g},{r.reference_a11:.17g},{r.ensemble_a11:.17g},"
                         f"{r.deviation:.17g},{r.se:.17g},{r.z:.17g}\n")


MIN_ENSEMBLE = 100


def total_variance_oracle(ensemble: Trajectory, reference: Trajectory,
                          sample_every: int = 1, threshold: float = 5.0) -> OracleReport:
    """Compare 2 Var_N(<X>) + E_N[a11] of a detected ensemble with an undetected a11.

    Both runs must share parameters, schedule and output grid. The ensemble
    means must carry a trajectory axis.
    """
    mx = np.asarray(ensemble.mean_x)
    if mx.ndim != 2 or mx.shape[1] < MIN_ENSEMBLE:
        n = 1 if mx.ndim < 2 else mx.shape[1]
        raise ValueError(f"ensemble of {n} trajectories is too small (need >= {MIN_ENSEMBLE})")
    if not np.array_equal(ensemble.t, reference.t):
        raise ValueError("ensemble and reference are sampled at different times")
    a11 = np.asarray(ensemble.a11)
    if a11.ndim == 1:
        a11 = a11[:, None] * np.ones(mx.shape[1])
    rows = []
    for i in range(0, len(ensemble.t), sample_every):
        var, se_var = jackknife_variance(mx[i])
        if np.all(a11[i] == a11[i, 0]):
            # shared covariance: avoid rounding noise from averaging identical values
            ea11, se_a11 = float(a11[i, 0]), 0.0
        else:
            ea11 = float(np.mean(a11[i]))
            se_a11 = float(np.std(a11[i], ddof=1) / math.sqrt(a11.shape[1]))
        est = 2.0 * var + ea11
        dev = est - float(reference.a11[i])
        se = math.hypot(2.0 * se_var, se_a11)
        rows.append(OracleRow(float(ensemble.t[i]), float(reference.a11[i]), est, dev, se))
    report = OracleReport("total_variance_oracle", True, threshold, rows)
    report.passed = all(abs(r.z) < threshold for r in rows)
    return report
