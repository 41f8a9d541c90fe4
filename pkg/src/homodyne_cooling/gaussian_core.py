"""Gaussian-state algebra for one probe segment interacting with the oscillator.

Quadrature ordering is (X_m, P_m, X_ph, P_ph). Covariances follow the
convention Gamma_ij = 2 Re<dq_i dq_j>, so the vacuum is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .params import SimParams

EPS_TOL = 1e-9

# Variance of the homodyne outcome about its mean, in quadrature units.
OUTCOME_VARIANCE = 0.5

_MEASURED = np.array([[0.0, 0.0], [0.0, 1.0]])


class CovarianceError(ArithmeticError):
    """A covariance left the physical (Heisenberg-respecting) set."""


@dataclass
class MechMoments:
    """Conditional means of X_m and P_m (units of x0 and p0).

    Fields may be floats or equally shaped arrays (one entry per trajectory).
    """

    mean_x: float
    mean_p: float

    def check(self):
        if not (np.all(np.isfinite(self.mean_x)) and np.all(np.isfinite(self.mean_p))):
            raise CovarianceError("non-finite conditional mean")
        return self


@dataclass
class CovarianceBlockA:
    """Mechanical 2x2 covariance block."""

    a11: float
    a12: float
    a21: float
    a22: float

    @classmethod
    def thermal(cls, nbar: float) -> "CovarianceBlockA":
        v = 2.0 * nbar + 1.0
        return cls(v, 0.0, 0.0, v)

    @classmethod
    def from_matrix(cls, m) -> "CovarianceBlockA":
        off = 0.5 * (m[0, 1] + m[1, 0])
        return cls(float(m[0, 0]), float(off), float(off), float(m[1, 1]))

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]], dtype=float)

    @property
    def det(self):
        return self.a11 * self.a22 - self.a12 * self.a21

    def check(self) -> "CovarianceBlockA":
        """Raise :class:`CovarianceError` unless the block is a physical state."""
        a11, a22 = np.asarray(self.a11), np.asarray(self.a22)
        if not (np.all(np.isfinite(a11)) and np.all(np.isfinite(a22))):
            raise CovarianceError("non-finite covariance entry")
        if np.any(a11 <= 0) or np.any(a22 <= 0):
            raise CovarianceError(
                f"non-positive variance: a11={self.a11!r}, a22={self.a22!r}"
            )
        scale = np.maximum(np.abs(a11), np.abs(a22))
        if np.any(np.abs(np.asarray(self.a12) - self.a21) > EPS_TOL * scale):
            raise CovarianceError("covariance block is not symmetric")
        if np.any(np.asarray(self.det) < 1.0 - EPS_TOL):
            raise CovarianceError(f"Heisenberg bound violated: det(A)={self.det!r}")
        return self


class JointCovariance:
    """4x4 covariance of oscillator plus one probe segment.

    Block layout::

        [[A,   C],
         [C^T, B]]
    """

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"joint covariance must be 4x4, got {m.shape}")
        self.matrix = m

    @property
    def A(self) -> np.ndarray:
        return self.matrix[:2, :2]

    @property
    def B(self) -> np.ndarray:
        return self.matrix[2:, 2:]

    @property
    def C(self) -> np.ndarray:
        return self.matrix[:2, 2:]

    def is_symmetric(self) -> bool:
        m = self.matrix
        return bool(np.all(np.abs(m - m.T) <= EPS_TOL * max(1.0, np.abs(m).max())))


@dataclass(frozen=True)
class ProbeSegment:
    """A coherent probe slice of duration `tau`."""

    tau: float
    kappa_tau: float
    eta: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.kappa_tau >= 0:
            raise ValueError(f"kappa_tau must be >= 0, got {self.kappa_tau}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")

    @classmethod
    def from_params(cls, params: SimParams, tau: float, power: float = 1.0,
                    eta: float | None = None) -> "ProbeSegment":
        """Segment with kappa_tau^2 = power * kappa^2 * tau."""
        return cls(
            tau=tau,
            kappa_tau=math.sqrt(power * params.kappa_sq * tau),
            eta=params.eta if eta is None else eta,
        )


def build_linear_map(omega: float, kappa_tau: float, tau: float) -> np.ndarray:
    """First-order joint map of the quadratures over one segment."""
    wt = omega * tau
    return np.array(
        [
            [1.0, wt, 0.0, 0.0],
            [-wt, 1.0, kappa_tau, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [kappa_tau, 0.0, 0.0, 1.0],
        ]
    )


def build_segment_map(omega: float, kappa_tau: float, tau: float,
                      exact_rotation: bool = True) -> np.ndarray:
    """Map used by :func:`discrete_step`.

    With ``exact_rotation`` the free evolution is the symplectic rotation by
    omega*tau followed by the probe coupling; otherwise the first-order map of
    :func:`build_linear_map` is returned. Both agree to first order in tau.
    """
    if not exact_rotation:
        return build_linear_map(omega, kappa_tau, tau)
    c, s = math.cos(omega * tau), math.sin(omega * tau)
    rot = np.array(
        [[c, s, 0.0, 0.0], [-s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    )
    couple = np.eye(4)
    couple[1, 2] = kappa_tau
    couple[3, 0] = kappa_tau
    return couple @ rot


def attach_probe(A: CovarianceBlockA) -> JointCovariance:
    """Join the oscillator block with a fresh vacuum-noise probe segment."""
    A.check()
    m = np.eye(4)
    m[:2, :2] = A.as_matrix()
    return JointCovariance(m)


def evolve_joint(gamma: JointCovariance, S: np.ndarray) -> JointCovariance:
    """Gamma -> S Gamma S^T, re-symmetrized."""
    m = S @ gamma.matrix @ S.T
    return JointCovariance(0.5 * (m + m.T))


def condition_on_homodyne(gamma: JointCovariance, eta: float, chi,
                          normalize: bool = False) -> Tuple[CovarianceBlockA, np.ndarray]:
    """Update the oscillator block after measuring P_ph.

    Default is the first-order form: the block becomes A - eta C diag(0,1) C^T
    and the mean shift is sqrt(eta) C (0, chi)^T with chi ~ N(0, 1/2). It
    matches one Euler step of the continuous filter but can undercut the
    uncertainty bound by O(kappa_tau^4 a11^2); that case raises
    :class:`CovarianceError`. ``normalize=True`` gives exact Gaussian
    conditioning: both terms are divided by D = eta B22 + 1 - eta and chi has
    variance D/2.

    `chi` may be an array of outcome deviations, in which case the shift has
    shape (2, n).
    """
    C = gamma.C
    D = eta * gamma.B[1, 1] + 1.0 - eta if normalize else 1.0
    A_new = gamma.A - (eta / D) * (C @ _MEASURED @ C.T)
    shift = (math.sqrt(eta) / D) * np.multiply.outer(C[:, 1], chi)
    block = CovarianceBlockA.from_matrix(A_new)
    block.check()
    if block.a11 > gamma.A[0, 0] * (1.0 + EPS_TOL):
        raise CovarianceError("conditioning increased the position variance")
    return block, shift


def outcome_variance(gamma: JointCovariance, eta: float) -> float:
    """Variance of the outcome deviation about its predicted mean, (eta B22 + 1 - eta) / 2."""
    return OUTCOME_VARIANCE * (eta * gamma.B[1, 1] + 1.0 - eta)


def sample_homodyne_outcome(mean_x, kappa_tau: float, chi):
    """Homodyne reading kappa_tau <X_m> + chi, where chi ~ N(0, 1/2)."""
    return kappa_tau * mean_x + chi


def draw_chi(noise, variance: float = OUTCOME_VARIANCE):
    """Outcome deviation chi ~ N(0, variance) drawn from a standard-normal stream."""
    return math.sqrt(variance) * noise.normal()


def discrete_step(state: Tuple[MechMoments, CovarianceBlockA], seg: ProbeSegment,
                  params: SimParams, noise, power: float = 1.0,
                  exact_rotation: bool = True,
                  normalize: bool = True) -> Tuple[MechMoments, CovarianceBlockA]:
    """One full probe segment: couple, measure, relax to the bath, drift.

    `seg.kappa_tau` should already include the power fraction (see
    :meth:`ProbeSegment.from_params`); `power` only scales the drift kick.
    ``exact_rotation=False`` selects the first-order map and
    ``normalize=False`` the first-order conditioning (see
    :func:`condition_on_homodyne`). The sub-step order is fixed for reproducibility.
    """
    from .trajectory import drift_rate

    moments, A = state
    tau = seg.tau
    S = build_segment_map(params.omega, seg.kappa_tau, tau, exact_rotation)

    gamma = evolve_joint(attach_probe(A), S)
    x, p = moments.mean_x, moments.mean_p
    mean_x = S[0, 0] * x + S[0, 1] * p
    mean_p = S[1, 0] * x + S[1, 1] * p
    # <P_ph> after coupling; the probe row of S reads the position it couples to.
    x_read = x if not exact_rotation else mean_x

    var = outcome_variance(gamma, seg.eta) if normalize else OUTCOME_VARIANCE
    chi = draw_chi(noise, var)
    outcome = sample_homodyne_outcome(x_read, seg.kappa_tau, chi)
    A_new, shift = condition_on_homodyne(gamma, seg.eta, outcome - seg.kappa_tau * x_read,
                                         normalize=normalize)
    mean_x = mean_x + shift[0]
    mean_p = mean_p + shift[1]

    decay = math.exp(-params.gamma * tau)
    th = params.thermal_variance
    a11 = th + (A_new.a11 - th) * decay
    a22 = th + (A_new.a22 - th) * decay
    a12 = A_new.a12 * decay
    half = math.exp(-0.5 * params.gamma * tau)
    mean_x = mean_x * half
    mean_p = mean_p * half

    mean_p = mean_p + drift_rate(params, power) * tau

    A_out = CovarianceBlockA(a11, a12, a12, a22).check()
    return MechMoments(mean_x, mean_p).check(), A_out
