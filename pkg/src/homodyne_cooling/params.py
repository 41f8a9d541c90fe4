"""Physical parameters of the probed oscillator."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from scipy import constants

TWO_PI = 2.0 * math.pi

# Reference system: 1 MHz cantilever, 1 mW probe at 580 nm.
REF_OMEGA = TWO_PI * 1.0e6
REF_GAMMA = TWO_PI * 10.0
REF_NBAR = 9360.0
REF_K = 0.65e-6
REF_MASS = 1.1e-11
REF_WAVELENGTH = 580e-9
REF_POWER = 1.0e-3
QUOTED_KAPPA_SQ = TWO_PI * 197.0


def photon_flux(power: float, wavelength: float) -> float:
    """Photons per second carried by a beam of `power` watts."""
    return power * wavelength / (constants.h * constants.c)


REF_PHI = photon_flux(REF_POWER, REF_WAVELENGTH)


class ParameterError(ValueError):
    """Raised when a parameter set violates its physical invariants."""


@dataclass(frozen=True)
class SimParams:
    """Rates and couplings of the monitored oscillator.

    Attributes:
        omega: mechanical angular frequency (rad/s).
        gamma: bath coupling rate (1/s).
        nbar: bath occupation number.
        eta: detector efficiency in [0, 1].
        k: phase shift per unit of dimensionless displacement (rad).
        phi: probe photon flux at full power (photons/s).
        kappa_sq_override: measurement rate used instead of 2 k^2 phi when set (1/s).
        mass: effective mass (kg), only used for converting to SI lengths.
        dt: integration step (s).
        kappa_follows_feedback: if True the feedback modulation also scales
            the measurement rate; by default only the drift force sees it.
    """

    omega: float = REF_OMEGA
    gamma: float = REF_GAMMA
    nbar: float = REF_NBAR
    eta: float = 1.0
    k: float = REF_K
    phi: float = REF_PHI
    kappa_sq_override: Optional[float] = None
    mass: float = REF_MASS
    dt: float = 1.0e-9
    kappa_follows_feedback: bool = False

    def __post_init__(self):
        if not self.omega > 0:
            raise ParameterError(f"omega must be > 0, got {self.omega}")
        if not self.gamma >= 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if not self.nbar >= 0:
            raise ParameterError(f"nbar must be >= 0, got {self.nbar}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.dt > 0:
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if self.omega * self.dt > 0.1:
            raise ParameterError(
                f"omega*dt = {self.omega * self.dt:.3g} exceeds 0.1; reduce dt"
            )
        if self.phi < 0:
            raise ParameterError(f"phi must be >= 0, got {self.phi}")
        if self.kappa_sq_override is not None and self.kappa_sq_override < 0:
            raise ParameterError("kappa_sq_override must be >= 0")

    @property
    def kappa_sq(self) -> float:
        """Full-power measurement rate kappa^2 (1/s)."""
        if self.kappa_sq_override is not None:
            return self.kappa_sq_override
        return 2.0 * self.k**2 * self.phi

    @property
    def thermal_variance(self) -> float:
        """Diagonal covariance entry 2 nbar + 1 of the bath state."""
        return 2.0 * self.nbar + 1.0

    @property
    def x0(self) -> float:
        """Zero-point length sqrt(hbar / m omega) in metres."""
        return math.sqrt(constants.hbar / (self.mass * self.omega))

    @property
    def x_rest(self) -> float:
        """Displaced rest position at full probe power (units of x0)."""
        return 2.0 * self.k * self.phi / self.omega

    def with_(self, **changes) -> "SimParams":
        return replace(self, **changes)


def reference_params(**changes) -> SimParams:
    """Reference parameter set with the quoted measurement rate 2 pi x 197 Hz."""
    base = SimParams(kappa_sq_override=QUOTED_KAPPA_SQ)
    return replace(base, **changes) if changes else base
