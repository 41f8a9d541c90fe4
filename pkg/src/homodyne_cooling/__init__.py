"""Gaussian conditional-state simulation of homodyne-monitored mechanical cooling."""

from __future__ import annotations

from .analytics import (
    effective_quanta,
    engines_agree,
    quanta_to_temperature,
    steady_state_a11,
    steady_state_a11_reduced,
    total_variance_oracle,
)
from .gaussian_core import CovarianceBlockA, CovarianceError, MechMoments, discrete_step
from .params import SimParams, reference_params
from .trajectory import Trajectory, TrajectoryState, run

__version__ = "0.1.0"

__all__ = [
    "CovarianceBlockA",
    "CovarianceError",
    "MechMoments",
    "SimParams",
    "Trajectory",
    "TrajectoryState",
    "discrete_step",
    "effective_quanta",
    "engines_agree",
    "quanta_to_temperature",
    "reference_params",
    "run",
    "steady_state_a11",
    "steady_state_a11_reduced",
    "total_variance_oracle",
]
