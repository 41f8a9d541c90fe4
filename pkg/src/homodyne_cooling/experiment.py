"""Scenario configuration, orchestration and CSV output."""

from __future__ import annotations

import ast
import difflib
import itertools
import math
import operator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from . import analytics as an
from .control import (
    FeedbackConfig,
    FeedbackController,
    FeedForwardPlan,
    StepSchedule,
    feed_forward_schedule,
)
from .gaussian_core import MechMoments
from .noise import EnsembleNoise, NoiseStream, SilentNoise
from .params import QUOTED_KAPPA_SQ, SimParams
from .trajectory import Trajectory, TrajectoryState, constant_power, run

CSV_HEADER = "t_s,mean_x,mean_p,a11,a12,a22,power_frac,n_eff"


class ConfigError(ValueError):
    pass


# -- value parsing -----------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_NAMES = {"pi": math.pi}


def _eval_number(text: str) -> float:
    """Evaluate a numeric literal or a small arithmetic expression like 2*pi*1e6."""

    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError(text)

    try:
        value = ev(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError):
        raise ValueError(f"malformed number {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {text!r}")
    return value


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"malformed boolean {text!r}")


def _parse_optional_time(text: str) -> Optional[float]:
    if text.strip().lower() in ("none", "off", "never"):
        return None
    return _eval_number(text)


def _parse_optional_number(text: str) -> Optional[float]:
    if text.strip().lower() in ("none", "off"):
        return None
    return _eval_number(text)


def _parse_int(text: str) -> int:
    v = _eval_number(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


# key -> (parser, description)
CONFIG_KEYS = {
    "scenario": (str.strip, "scenario name: figure2, no-detection, no-feedback, steady-state"),
    "omega": (_eval_number, "mechanical angular frequency (rad/s)"),
    "gamma": (_eval_number, "bath coupling rate (1/s)"),
    "nbar": (_eval_number, "bath occupation"),
    "eta": (_eval_number, "detector efficiency [0, 1]"),
    "k": (_eval_number, "phase shift per x0 (rad)"),
    "phi": (_eval_number, "full-power photon flux (1/s)"),
    "kappa_sq_override": (_parse_optional_number, "measurement rate replacing 2 k^2 phi (1/s) or none"),
    "mass": (_eval_number, "effective mass (kg)"),
    "dt": (_eval_number, "integration step (s)"),
    "kappa_follows_feedback": (_parse_bool, "feedback modulation also scales kappa^2"),
    "exact_rotation": (_parse_bool, "apply the free rotation exactly each step"),
    "t_probe_on": (_parse_optional_time, "probe switch-on time (s) or none"),
    "feed_forward": (_parse_bool, "half power for pi/omega before full power"),
    "t_detect": (_parse_optional_time, "detection start (s) or none"),
    "enabled_from": (_parse_optional_time, "feedback start (s) or none"),
    "gain": (_eval_number, "feedback modulation per x0 of amplitude"),
    "eps_max": (_eval_number, "cap on relative power modulation (<= 0.1)"),
    "delay": (_eval_number, "feedback loop delay (s)"),
    "compensate_delay": (_parse_bool, "propagate estimate through commands sent during the delay"),
    "seed": (_parse_int, "unsigned 64-bit noise seed"),
    "duration": (_eval_number, "simulated time (s)"),
    "out": (str.strip, "output CSV path"),
    "stride": (_parse_int, "write every N-th step"),
}

_PARAM_KEYS = ("omega", "gamma", "nbar", "eta", "k", "phi", "kappa_sq_override", "mass", "dt",
               "kappa_follows_feedback")
_FEEDBACK_KEYS = ("gain", "eps_max", "delay", "compensate_delay")


@dataclass
class ScenarioConfig:
    name: str
    params: SimParams
    t_probe_on: Optional[float] = 1.0e-6
    feed_forward: bool = True
    t_detect: Optional[float] = 2.5e-6
    t_feedback: Optional[float] = 10.0e-6
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    seed: int = 42
    duration: float = 60.0e-6
    out: str = "figure2.csv"
    stride: int = 10
    exact_rotation: bool = True

    def __post_init__(self):
        self.validate()

    def stage_times(self) -> List[float]:
        times = []
        if self.t_probe_on is not None:
            times.append(self.t_probe_on)
            if self.feed_forward:
                times.append(self.t_probe_on + math.pi / self.params.omega)
        if self.t_detect is not None:
            times.append(self.t_detect)
        if self.t_feedback is not None:
            times.append(self.t_feedback)
        return times

    def validate(self):
        times = self.stage_times()
        if any(t < 0 for t in times):
            raise ConfigError("stage times must be >= 0")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError(f"stage times must not decrease: {times}")
        if self.t_feedback is not None:
            if self.t_detect is None or self.t_feedback <= self.t_detect:
                raise ConfigError("feedback needs detection to start strictly earlier")
            if self.t_probe_on is None:
                raise ConfigError("feedback acts through the probe, which is never switched on")
        if not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if times and self.duration < times[-1]:
            raise ConfigError(f"duration {self.duration} ends before the last stage ({times[-1]})")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def schedule(self):
        if self.t_probe_on is None:
            return constant_power(0.0)
        if self.feed_forward:
            return feed_forward_schedule(FeedForwardPlan(self.t_probe_on, self.params.omega))
        return StepSchedule(self.t_probe_on)

    def controller(self) -> Optional[FeedbackController]:
        if self.t_feedback is None:
            return None
        return FeedbackController(replace(self.feedback, enabled_from=self.t_feedback), self.params)

    def initial_state(self) -> TrajectoryState:
        return TrajectoryState.thermal(self.params)


def scenario_defaults(name: str) -> ScenarioConfig:
    """Shipped scenarios, all on the reference parameter set."""
    params = SimParams(kappa_sq_override=QUOTED_KAPPA_SQ)
    if name == "figure2":
        return ScenarioConfig("figure2", params, out="figure2.csv")
    if name == "no-detection":
        return ScenarioConfig("no-detection", params.with_(eta=0.0), t_detect=None,
                              t_feedback=None, duration=100.0e-6, out="no-detection.csv")
    if name == "no-feedback":
        return ScenarioConfig("no-feedback", params, t_feedback=None, out="no-feedback.csv")
    if name == "steady-state":
        return ScenarioConfig("steady-state", params, t_probe_on=0.0, feed_forward=False,
                              t_detect=0.0, t_feedback=None, duration=200.0e-6,
                              out="steady-state.csv")
    raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


SCENARIOS = ("figure2", "no-detection", "no-feedback", "steady-state")


def _hint(key: str) -> str:
    close = difflib.get_close_matches(key, CONFIG_KEYS, n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def read_key_values(path) -> Dict[str, tuple]:
    """Read `key = value` lines; returns {key: (raw_value, line_no)}."""
    entries: Dict[str, tuple] = {}
    text = Path(path).read_text(encoding="utf-8")
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{no}: missing key")
        if key in entries:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r}")
        entries[key] = (value, no)
    return entries


def build_config(values: Dict[str, object], scenario: Optional[str]) -> ScenarioConfig:
    """Apply parsed values on top of a scenario's defaults."""
    name = values.pop("scenario", None) if scenario is None else scenario
    values.pop("scenario", None)
    if name is None:
        raise ConfigError("missing required key 'scenario'")
    cfg = scenario_defaults(str(name))
    param_changes = {k: values.pop(k) for k in list(values) if k in _PARAM_KEYS}
    fb_changes = {k: values.pop(k) for k in list(values) if k in _FEEDBACK_KEYS}
    if "enabled_from" in values:
        values["t_feedback"] = values.pop("enabled_from")
    try:
        params = cfg.params.with_(**param_changes)
        feedback = replace(cfg.feedback, **fb_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return replace(cfg, params=params, feedback=feedback, **values)


def parse_config(path=None, scenario: Optional[str] = None,
                 overrides: Optional[Dict[str, object]] = None) -> ScenarioConfig:
    """Load a scenario config file; `overrides` (already typed) win over the file.

    Raises:
        ConfigError: unknown key, malformed value, range violation, or no
            scenario selected.
    """
    values: Dict[str, object] = {}
    if path is not None:
        for key, (raw, no) in read_key_values(path).items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{no}: unknown key {key!r}{_hint(key)}")
            parser = CONFIG_KEYS[key][0]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{no}: {key}: {exc}") from None
    for key, value in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}{_hint(key)}")
        if value is not None:
            values[key] = value
    return build_config(values, scenario)


# -- output ------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n_eff = traj.n_eff
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(len(traj.t)):
            fh.write(",".join(_fmt(float(v)) for v in (
                traj.t[i], traj.mean_x[i], traj.mean_p[i], traj.a11[i], traj.a12[i],
                traj.a22[i], traj.power[i], n_eff[i])) + "\n")


def write_key_value_csv(rows: Dict[str, object], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key,value\n")
        for k, v in rows.items():
            fh.write(f"{k},{_fmt(v) if isinstance(v, float) else v}\n")


def _summary_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".summary.csv")


# -- orchestration -----------------------------------------------------------


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    trajectory: Trajectory
    summary: Dict[str, object]
    max_abs_modulation: float = 0.0


def oscillation_amplitude(traj: Trajectory, params: SimParams) -> np.ndarray:
    """|<X> - x_rest(p)| + i<P>| at each row, with x_rest at the recorded base power."""
    base = traj.power - traj.modulation
    x_rest = 2.0 * params.k * params.phi * base / params.omega
    return np.hypot(traj.mean_x - x_rest, traj.mean_p)


def summarize(cfg: ScenarioConfig, traj: Trajectory, max_mod: float) -> Dict[str, object]:
    p = cfg.params
    fin = traj.final_state()
    n_final = an.effective_quanta(fin.cov)
    summary: Dict[str, object] = {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "t_end_s": float(traj.t[-1]),
        "kappa_sq": p.kappa_sq,
        "x_rest": p.x_rest,
        "final_a11": float(fin.cov.a11),
        "final_a22": float(fin.cov.a22),
        "final_n_eff": float(n_final),
        "final_T_eff_K": an.quanta_to_temperature(max(float(n_final), 0.0), p.omega),
        "final_amplitude": float(oscillation_amplitude(traj, p)[-1]),
        "max_abs_modulation": float(max_mod),
    }
    if p.eta > 0 and p.kappa_sq > 0 and cfg.t_detect is not None:
        rep = an.steady_state_report(p)
        summary.update({
            "steady_a11_exact": rep.a11_exact,
            "steady_a11_reduced": rep.a11_reduced,
            "steady_n_eff": rep.n_eff,
            "steady_T_eff_K": rep.T_eff,
            "final_a11_rel_dev": float(fin.cov.a11) / rep.a11_exact - 1.0,
        })
        t4 = cfg.t_detect + 4.0e-6
        if t4 <= traj.t[-1]:
            i = int(np.argmin(np.abs(traj.t - t4)))
            summary["n_eff_detect_plus_4us"] = float(traj.n_eff[i])
    return summary


def simulate(cfg: ScenarioConfig, noise=None, innovation_variance: float = 0.5):
    """Run a scenario without writing files."""
    noise = NoiseStream(cfg.seed) if noise is None else noise
    ctl = cfg.controller()
    traj = run(cfg.initial_state(), cfg.params, cfg.schedule(), cfg.duration, noise,
               controller=ctl, detect_from=cfg.t_detect, stride=cfg.stride,
               exact_rotation=cfg.exact_rotation, innovation_variance=innovation_variance)
    return traj, (ctl.max_abs_modulation if ctl is not None else 0.0)


def run_scenario(cfg: ScenarioConfig, write: bool = True) -> ScenarioResult:
    traj, max_mod = simulate(cfg)
    summary = summarize(cfg, traj, max_mod)
    if write:
        write_trajectory_csv(traj, cfg.out)
        write_key_value_csv(summary, _summary_path(cfg.out))
    return ScenarioResult(cfg, traj, summary, max_mod)


@dataclass
class EnsembleResult:
    config: ScenarioConfig
    trajectories: Trajectory
    stats: Dict[str, np.ndarray]
    master_seed: int


def ensemble_stats(traj: Trajectory) -> Dict[str, np.ndarray]:
    mx = np.atleast_2d(np.asarray(traj.mean_x).T).T
    n = mx.shape[1]
    var = np.var(mx, axis=1, ddof=1) if n > 1 else np.zeros(len(traj.t))
    a11 = np.asarray(traj.a11)
    mean_a11 = a11.mean(axis=1) if a11.ndim == 2 else a11
    return {
        "t_s": traj.t,
        "mean_mean_x": mx.mean(axis=1),
        "var_mean_x": var,
        "mean_a11": mean_a11,
        "total_x_variance": 2.0 * var + mean_a11,
    }


def run_ensemble(cfg: ScenarioConfig, n: int, master_seed: int, out_dir=None,
                 write_trajectories: bool = True,
                 innovation_variance: float = 0.5) -> EnsembleResult:
    """N independent trajectories advanced in lockstep.

    Trajectory i uses noise stream (master_seed, i); trajectory 0 therefore
    reproduces :func:`run_scenario` with ``seed = master_seed``.
    """
    if n < 1:
        raise ValueError("ensemble needs N >= 1")
    init = cfg.initial_state()
    zeros = np.zeros(n)
    init = TrajectoryState(init.t, MechMoments(init.moments.mean_x + zeros,
                                               init.moments.mean_p + zeros), init.cov)
    ctl = cfg.controller()
    traj = run(init, cfg.params, cfg.schedule(), cfg.duration, EnsembleNoise(master_seed, n),
               controller=ctl, detect_from=cfg.t_detect, stride=cfg.stride,
               exact_rotation=cfg.exact_rotation, innovation_variance=innovation_variance)
    stats = ensemble_stats(traj)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = Path(cfg.out).stem
        if write_trajectories:
            for i in range(n):
                write_trajectory_csv(traj.member(i), out / f"{stem}_traj{i:05d}.csv")
        with open(out / f"{stem}_ensemble_stats.csv", "w", encoding="utf-8", newline="\n") as fh:
            keys = list(stats)
            fh.write(",".join(keys) + "\n")
            for i in range(len(traj.t)):
                fh.write(",".join(_fmt(float(stats[k][i])) for k in keys) + "\n")
    return EnsembleResult(cfg, traj, stats, master_seed)


# -- parameter sweeps --------------------------------------------------------

SWEEP_KEYS = ("gamma", "kappa_sq", "eta", "nbar")
SWEEP_HEADER = ("gamma,kappa_sq,eta,nbar,a11_exact,a11_reduced,a11_simulated,"
                "rel_dev_reduced,rel_dev_simulated,sim_method")

# Beyond this many oscillation periods per relaxation time the full ODE is
# integrated in its rotation-averaged form instead.
FULL_ODE_PERIOD_LIMIT = 2.0e4


def parse_grid(path) -> Dict[str, List[float]]:
    grid: Dict[str, List[float]] = {}
    for key, (raw, no) in read_key_values(path).items():
        if key not in SWEEP_KEYS:
            close = difflib.get_close_matches(key, SWEEP_KEYS, n=1)
            hint = f" (did you mean {close[0]!r}?)" if close else ""
            raise ConfigError(f"{path}:{no}: unknown grid key {key!r}{hint}")
        try:
            grid[key] = [_eval_number(v) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"{path}:{no}: {key}: {exc}") from None
        if not grid[key]:
            raise ConfigError(f"{path}:{no}: {key}: empty value list")
    return grid


@dataclass
class SweepRow:
    gamma: float
    kappa_sq: float
    eta: float
    nbar: float
    a11_exact: float
    a11_reduced: float
    a11_simulated: float
    sim_method: str

    @property
    def rel_dev_reduced(self) -> float:
        return self.a11_reduced / self.a11_exact - 1.0

    @property
    def rel_dev_simulated(self) -> float:
        return self.a11_simulated / self.a11_exact - 1.0


def sweep_point(params: SimParams, simulate: bool = True) -> SweepRow:
    g, k2, eta, nbar = params.gamma, params.kappa_sq, params.eta, params.nbar
    exact = an.steady_state_a11(g, k2, eta, nbar)
    reduced = an.steady_state_a11_reduced(g, k2, eta, nbar)
    if not simulate:
        return SweepRow(g, k2, eta, nbar, exact, reduced, math.nan, "none")
    rate = g + eta * k2 * exact
    periods = params.omega / (2.0 * math.pi * rate)
    if periods <= FULL_ODE_PERIOD_LIMIT:
        sim, method = an.simulated_steady_a11(params), "full"
    else:
        sim, method = an.averaged_steady_a11(g, k2, eta, nbar), "averaged"
    return SweepRow(g, k2, eta, nbar, exact, reduced, sim, method)


def sweep_grid_params(base: SimParams, grid: Dict[str, Iterable[float]]) -> List[SimParams]:
    """Cartesian product of the grid axes; missing axes keep the base value."""
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    defaults = {"gamma": base.gamma, "kappa_sq": base.kappa_sq, "eta": base.eta,
                "nbar": base.nbar}
    lists = [list(grid.get(k, [])) or [defaults[k]] for k in SWEEP_KEYS]
    out = []
    for g, k2, eta, nbar in itertools.product(*lists):
        try:
            out.append(base.with_(gamma=g, kappa_sq_override=k2, eta=eta, nbar=nbar))
        except ValueError as exc:
            raise ConfigError(f"grid point gamma={g}, kappa_sq={k2}, eta={eta}, "
                              f"nbar={nbar}: {exc}") from None
    return out


def run_sweep(cfg: ScenarioConfig, grid: Dict[str, Iterable[float]], out=None,
              simulate: bool = True, jobs: int = 1) -> List[SweepRow]:
    """Steady-state a11 from both closed forms and from integration on a grid.

    Points are independent; with ``jobs > 1`` they run in worker processes and
    rows keep grid order.
    """
    points = sweep_grid_params(cfg.params, grid)
    task = partial(sweep_point, simulate=simulate)
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(task, points))
    else:
        rows = [task(p) for p in points]
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(SWEEP_HEADER + "\n")
            for r in rows:
                fh.write(",".join([_fmt(r.gamma), _fmt(r.kappa_sq), _fmt(r.eta), _fmt(r.nbar),
                                   _fmt(r.a11_exact), _fmt(r.a11_reduced),
                                   _fmt(r.a11_simulated), _fmt(r.rel_dev_reduced),
                                   _fmt(r.rel_dev_simulated), r.sim_method]) + "\n")
    return rows


# -- verification ------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def oracle_config(duration: float = 20.0e-6, stride: int = 1000) -> ScenarioConfig:
    """Detection at full power from t = 0, no feedback; used by the variance oracle."""
    base = scenario_defaults("steady-state")
    return replace(base, name="oracle", duration=duration, stride=stride)


def run_total_variance_oracle(n: int = 1000, master_seed: int = 2024,
                              innovation_variance: float = 0.5,
                              duration: float = 20.0e-6, stride: int = 1000):
    cfg = oracle_config(duration, stride)
    ens = run_ensemble(cfg, n, master_seed, innovation_variance=innovation_variance)
    ref_cfg = replace(cfg, t_detect=None)
    ref, _ = simulate(ref_cfg, noise=SilentNoise())
    return an.total_variance_oracle(ens.trajectories, ref)


def triple_agreement(params: Optional[SimParams] = None) -> SweepRow:
    params = params or scenario_defaults("figure2").params
    return sweep_point(params)


def verify(n: int = 1000, master_seed: int = 2024, out_dir=None) -> List[Check]:
    """Engine agreement, law-of-total-variance oracle and steady-state agreement."""
    checks = []
    params = scenario_defaults("figure2").params
    d1 = an.engines_agree(params, 10.0e-6, tau=1.0e-9)
    d2 = an.engines_agree(params, 10.0e-6, tau=2.0e-9)
    ratio = d2 / d1 if d1 > 0 else math.inf
    checks.append(Check("engines_agree", d1 < 1e-3 and 1.7 <= ratio <= 2.3,
                        f"discrepancy {d1:.3e} at 1 ns, {d2:.3e} at 2 ns, ratio {ratio:.3f}"))

    rep = run_total_variance_oracle(n, master_seed)
    checks.append(Check("total_variance_oracle", rep.passed,
                        f"max |z| = {rep.max_abs_z:.2f} over {len(rep.rows)} times (N={n})"))
    neg = run_total_variance_oracle(n, master_seed, innovation_variance=1.0)
    checks.append(Check("total_variance_negative_control", not neg.passed,
                        f"mis-normalized dW gives max |z| = {neg.max_abs_z:.2f} "
                        f"({'rejected' if not neg.passed else 'NOT rejected'})"))

    row = triple_agreement(params)
    worst = max(abs(row.rel_dev_reduced), abs(row.rel_dev_simulated))
    checks.append(Check("steady_state_triple", worst < 0.01,
                        f"a11 exact {row.a11_exact:.4f}, reduced {row.a11_reduced:.4f}, "
                        f"simulated {row.a11_simulated:.4f} (max rel dev {worst:.2e})"))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep.to_csv(out / "total_variance_oracle.csv")
        neg.to_csv(out / "total_variance_negative_control.csv")
        with open(out / "verify.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("check,status,detail\n")
            for c in checks:
                fh.write(f"{c.name},{'PASS' if c.passed else 'FAIL'},\"{c.detail}\"\n")
    return checks
