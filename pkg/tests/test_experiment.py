from __future__ import annotations

import math

import numpy as np
import pytest

from homodyne_cooling import analytics as an
from homodyne_cooling import experiment as ex
from homodyne_cooling.gaussian_core import CovarianceError
from homodyne_cooling.params import QUOTED_KAPPA_SQ, REF_PHI, SimParams


def _write(tmp_path, text, name="cfg.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# -- configuration ------------------------------------------------------------


def test_empty_file_gives_reference_scenario(tmp_path):
    cfg = ex.parse_config(_write(tmp_path, ""), scenario="figure2")
    p = cfg.params
    assert p.omega == 2 * math.pi * 1e6
    assert p.gamma == 2 * math.pi * 10
    assert (p.nbar, p.eta, p.k) == (9360.0, 1.0, 0.65e-6)
    assert p.phi == REF_PHI
    assert p.kappa_sq == QUOTED_KAPPA_SQ
    assert cfg.stage_times() == pytest.approx([1e-6, 1.5e-6, 2.5e-6, 10e-6])
    assert cfg.feedback.delay == 1e-6
    assert (cfg.seed, cfg.stride, cfg.duration) == (42, 10, 60e-6)


def test_scenario_key_in_file(tmp_path):
    cfg = ex.parse_config(_write(tmp_path, "scenario = steady-state  # comment\n"))
    assert cfg.name == "steady-state"
    assert cfg.t_detect == 0.0 and cfg.t_feedback is None


def test_missing_scenario(tmp_path):
    with pytest.raises(ex.ConfigError, match="scenario"):
        ex.parse_config(_write(tmp_path, "eta = 0.5\n"))


def test_efficiency_out_of_range(tmp_path):
    with pytest.raises(ex.ConfigError, match="eta"):
        ex.parse_config(_write(tmp_path, "eta = 1.5\n"), scenario="figure2")


def test_quoted_rate_override(tmp_path):
    cfg = ex.parse_config(_write(tmp_path, "kappa_sq_override = 1237.9\n"), scenario="figure2")
    assert cfg.params.kappa_sq == 1237.9
    assert 1237.9 == pytest.approx(2 * math.pi * 197, rel=1e-4)
    cfg = ex.parse_config(_write(tmp_path, "kappa_sq_override = none\n"), scenario="figure2")
    assert cfg.params.kappa_sq == 2 * cfg.params.k**2 * cfg.params.phi


def test_unknown_key_suggests_nearest(tmp_path):
    with pytest.raises(ex.ConfigError, match="did you mean 'gamma'"):
        ex.parse_config(_write(tmp_path, "gama = 3\n"), scenario="figure2")


@pytest.mark.parametrize("text", ["gamma = 1e", "gamma = abc", "gamma = 2**", "seed = 1.5",
                                  "feed_forward = maybe", "gamma = 1/0"])
def test_malformed_values(tmp_path, text):
    with pytest.raises(ex.ConfigError, match=":1:"):
        ex.parse_config(_write(tmp_path, text), scenario="figure2")


def test_structural_errors(tmp_path):
    with pytest.raises(ex.ConfigError, match="expected 'key = value'"):
        ex.parse_config(_write(tmp_path, "gamma 3\n"), scenario="figure2")
    with pytest.raises(ex.ConfigError, match="duplicate"):
        ex.parse_config(_write(tmp_path, "eta = 1\neta = 0.5\n"), scenario="figure2")


def test_expressions_and_units(tmp_path):
    cfg = ex.parse_config(_write(tmp_path, "omega = 2*pi*2e6\ngamma = -(-5)\n"),
                          scenario="figure2")
    assert cfg.params.omega == 2 * math.pi * 2e6
    assert cfg.params.gamma == 5.0


def test_flags_override_file(tmp_path):
    path = _write(tmp_path, "seed = 5\nduration = 20e-6\n")
    cfg = ex.parse_config(path, scenario="figure2", overrides={"seed": 9, "dt": None})
    assert cfg.seed == 9 and cfg.duration == 20e-6 and cfg.params.dt == 1e-9


def test_controller_keys(tmp_path):
    text = "gain = 0.001\neps_max = 0.05\ndelay = 0.5e-6\nenabled_from = 12e-6\n"
    cfg = ex.parse_config(_write(tmp_path, text), scenario="figure2")
    assert (cfg.feedback.gain, cfg.feedback.eps_max, cfg.feedback.delay) == (0.001, 0.05, 0.5e-6)
    assert cfg.t_feedback == 12e-6
    assert cfg.controller().cfg.enabled_from == 12e-6
    with pytest.raises(ex.ConfigError):
        ex.parse_config(_write(tmp_path, "eps_max = 0.2\n"), scenario="figure2")


@pytest.mark.parametrize("text", [
    "t_detect = 0.5e-6",            # detection before the probe
    "enabled_from = 2e-6",          # feedback before detection
    "t_detect = none",              # feedback without detection
    "duration = 5e-6",              # ends before feedback starts
    "stride = 0",
    "seed = -1",
])
def test_stage_validation(tmp_path, text):
    with pytest.raises(ex.ConfigError):
        ex.parse_config(_write(tmp_path, text), scenario="figure2")


def test_unknown_scenario():
    with pytest.raises(ex.ConfigError, match="unknown scenario"):
        ex.scenario_defaults("figure3")


# -- single runs --------------------------------------------------------------


def _short(name, tmp_path, **changes):
    cfg = ex.scenario_defaults(name)
    cfg.out = str(tmp_path / f"{name}.csv")
    for k, v in changes.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


def test_csv_layout_and_round_trip(tmp_path):
    cfg = _short("figure2", tmp_path, duration=12e-6, stride=100)
    res = ex.run_scenario(cfg)
    lines = open(cfg.out, encoding="utf-8").read().splitlines()
    assert lines[0] == "t_s,mean_x,mean_p,a11,a12,a22,power_frac,n_eff"
    assert len(res.trajectory.t) == 121
    assert len(lines) == len(res.trajectory.t) + 1
    data = np.loadtxt(cfg.out, delimiter=",", skiprows=1)
    tr = res.trajectory
    for j, col in enumerate((tr.t, tr.mean_x, tr.mean_p, tr.a11, tr.a12, tr.a22, tr.power,
                             tr.n_eff)):
        np.testing.assert_array_equal(data[:, j], col)
    assert np.all(np.diff(data[:, 0]) > 0)
    summary = (tmp_path / "figure2.summary.csv").read_text().splitlines()
    assert summary[0] == "key,value"


def test_rerun_is_bit_identical(tmp_path):
    a = _short("figure2", tmp_path, duration=12e-6)
    ex.run_scenario(a)
    first = open(a.out, "rb").read()
    ex.run_scenario(a)
    assert open(a.out, "rb").read() == first
    b = _short("figure2", tmp_path, duration=12e-6, seed=43)
    b.out = str(tmp_path / "other.csv")
    ex.run_scenario(b)
    assert open(b.out, "rb").read() != first


def test_no_detection_stays_thermal(tmp_path):
    res = ex.run_scenario(_short("no-detection", tmp_path), write=False)
    a11 = res.trajectory.a11
    assert res.trajectory.t[-1] == pytest.approx(100e-6)
    assert np.max(np.abs(a11 / 18721.0 - 1.0)) < 0.01


def test_summary_uses_closed_forms(tmp_path):
    res = ex.run_scenario(_short("no-feedback", tmp_path, duration=8e-6), write=False)
    rep = an.steady_state_report(res.config.params)
    s = res.summary
    assert s["steady_a11_exact"] == rep.a11_exact
    assert s["steady_a11_reduced"] == rep.a11_reduced
    assert s["steady_T_eff_K"] == rep.T_eff
    assert s["final_a11"] == res.trajectory.a11[-1]
    assert 100 < s["n_eff_detect_plus_4us"] < 300
    assert s["max_abs_modulation"] == 0.0


def test_engine_failure_carries_timestamp(tmp_path):
    cfg = _short("steady-state", tmp_path, duration=1e-7, exact_rotation=False)
    cfg.params = SimParams(kappa_sq_override=1e9)
    with pytest.raises(CovarianceError, match="t="):
        ex.run_scenario(cfg, write=False)


# -- ensembles ----------------------------------------------------------------


def test_single_member_ensemble_matches_single_run(tmp_path):
    cfg = _short("figure2", tmp_path, duration=14e-6)
    ex.run_scenario(cfg)
    ens = ex.run_ensemble(cfg, 1, cfg.seed, out_dir=tmp_path / "ens")
    member = tmp_path / "ens" / "figure2_traj00000.csv"
    assert member.read_bytes() == open(cfg.out, "rb").read()
    stats = (tmp_path / "ens" / "figure2_ensemble_stats.csv").read_text().splitlines()
    assert stats[0] == "t_s,mean_mean_x,var_mean_x,mean_a11,total_x_variance"
    assert np.all(ens.stats["var_mean_x"] == 0.0)


def test_members_follow_their_own_streams(tmp_path):
    cfg = _short("no-feedback", tmp_path, duration=6e-6)
    ens = ex.run_ensemble(cfg, 3, 77)
    cfg.seed = 77
    single = ex.run_scenario(cfg, write=False).trajectory
    np.testing.assert_array_equal(ens.trajectories.member(0).mean_x, single.mean_x)
    assert not np.array_equal(ens.trajectories.member(1).mean_x, single.mean_x)


def test_master_seeds_give_compatible_statistics():
    cfg = ex.oracle_config(duration=10e-6, stride=1000)
    a = ex.run_ensemble(cfg, 400, 1).trajectories
    b = ex.run_ensemble(cfg, 400, 2).trajectories
    assert not np.array_equal(a.mean_x, b.mean_x)
    for i in range(1, len(a.t)):
        va, sa = an.jackknife_variance(a.mean_x[i])
        vb, sb = an.jackknife_variance(b.mean_x[i])
        assert abs(va - vb) < 5 * math.hypot(sa, sb)


def test_ensemble_size_checked():
    with pytest.raises(ValueError):
        ex.run_ensemble(ex.scenario_defaults("figure2"), 0, 1)


# -- sweeps -------------------------------------------------------------------


def test_grid_file(tmp_path):
    grid = ex.parse_grid(_write(tmp_path, "eta = 0.25, 0.5, 1\ngamma = 0\n", "grid.txt"))
    assert grid == {"eta": [0.25, 0.5, 1.0], "gamma": [0.0]}
    with pytest.raises(ex.ConfigError, match="did you mean 'gamma'"):
        ex.parse_grid(_write(tmp_path, "gamm = 1\n", "bad.txt"))
    with pytest.raises(ex.ConfigError):
        ex.parse_grid(_write(tmp_path, "eta = \n", "empty.txt"))


def test_sweep_reference_point_triple_agreement(tmp_path):
    rows = ex.run_sweep(ex.scenario_defaults("figure2"), {}, out=tmp_path / "s.csv")
    (r,) = rows
    assert r.sim_method == "full"
    assert r.a11_exact == pytest.approx(43.55, abs=0.01)
    assert abs(r.rel_dev_reduced) < 0.01 and abs(r.rel_dev_simulated) < 0.01
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ex.SWEEP_HEADER and len(lines) == 2


def test_sweep_without_bath_scales_with_efficiency():
    rows = ex.run_sweep(ex.scenario_defaults("figure2"),
                        {"gamma": [0.0], "eta": [0.25, 0.5, 1.0]}, simulate=False)
    a = [r.a11_exact for r in rows]
    assert a == [1 / math.sqrt(eta) for eta in (0.25, 0.5, 1.0)]
    assert a[0] / a[1] == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert [r.a11_reduced for r in rows] == a
    assert all(math.isnan(r.a11_simulated) for r in rows)


def test_sweep_integration_without_bath():
    (r,) = ex.run_sweep(ex.scenario_defaults("figure2"), {"gamma": [0.0]})
    assert r.a11_exact == 1.0
    assert r.a11_simulated == pytest.approx(1.0, abs=1e-5)


def test_sweep_parallel_matches_serial():
    grid = {"gamma": [62.83, 628.3], "eta": [0.5, 1.0]}
    cfg = ex.scenario_defaults("figure2")
    assert ex.run_sweep(cfg, grid, jobs=2) == ex.run_sweep(cfg, grid, jobs=1)


def test_sweep_falls_back_to_averaged_equation():
    (r,) = ex.run_sweep(ex.scenario_defaults("figure2"), {"gamma": [1e-3], "kappa_sq": [1e-3]})
    assert r.sim_method == "averaged"
    assert r.rel_dev_simulated == pytest.approx(0.0, abs=1e-8)


def test_sweep_rejects_invalid_point():
    with pytest.raises(ex.ConfigError):
        ex.run_sweep(ex.scenario_defaults("figure2"), {"eta": [2.0]})
