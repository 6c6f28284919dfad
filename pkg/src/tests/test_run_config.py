#!/usr/bin/env python3
"""Tests for the flat run config: defaults, file values and flag overrides."""

import sys
from pathlib import Path

_SRC = Path(__file__).resolve().parents[1]
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from pydantic import ValidationError  # noqa: E402

from run_config import ConfigError, RunConfig, load_defaults, read_config_file, resolve_run_config  # noqa: E402


def _write(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_come_from_config_yaml():
    defaults = load_defaults()
    assert defaults["grid_points"] == 801
    assert len(defaults["slope_grid"]) == 61
    assert defaults["slope_grid"][-1] == 1.0e6

    run = resolve_run_config()
    assert run.rel_tol == 1e-8
    assert run.threshold == 1e-3
    assert run.surface_a == float("inf")


def test_flags_override_file_and_none_flags_are_ignored(tmp_path):
    path = _write(tmp_path, "lam: 0.5\nn0: 2.0\ntrials: 7\n")
    run = resolve_run_config(path, {"lam": 0.4, "n0": None, "out": tmp_path / "o"})
    assert run.lam == 0.4
    assert run.n0 == 2.0
    assert run.trials == 7
    assert run.out == tmp_path / "o"


def test_unknown_keys_are_rejected(tmp_path):
    path = _write(tmp_path, "lam: 0.4\nwavelength: 0.4\n")
    try:
        resolve_run_config(path)
        assert False, "expected ValidationError"
    except ValidationError as err:
        assert "wavelength" in str(err)


def test_invalid_values_are_rejected():
    for values in ({"lam": -1.0}, {"nu": 0.7}, {"threads": 0}, {"gram_mode": "exact"}):
        try:
            RunConfig.model_validate(values)
            assert False, "expected ValidationError"
        except ValidationError:
            pass


def test_config_file_must_be_flat(tmp_path):
    for text in ("quadrature:\n  rel_tol: 1.0e-6\n", "- 1\n- 2\n"):
        try:
            read_config_file(_write(tmp_path, text))
            assert False, "expected ConfigError"
        except ConfigError:
            pass
    assert read_config_file(_write(tmp_path, "")) == {}


def test_malformed_yaml_is_a_config_error(tmp_path):
    for text in ("lam: [0.4\n", "lam: 0.4\n  n0: 1\n"):
        try:
            read_config_file(_write(tmp_path, text))
            assert False, "expected ConfigError"
        except ConfigError as err:
            assert "not valid YAML" in str(err)


def test_unset_seed_and_trials_keep_experiment_defaults(tmp_path):
    run = RunConfig(geometry="line", dims=(2.0,), density=3.0, lam=0.4, n0=1.0, p_bar=1.0)
    assert run.seed is None and run.trials is None and run.monte_carlo() == {}
    cfg = run.experiment()
    assert cfg.base_seed == 0 and cfg.trials == 100

    path = _write(tmp_path, "seed: 7\ntrials: 2\ndensities: [1.0, 2.5]\n")
    run = resolve_run_config(path, {"trials": 3})
    assert run.monte_carlo() == {"trials": 3, "base_seed": 7}
    assert run.densities == [1.0, 2.5]


def test_line_builder():
    run = RunConfig(lam=0.4, theta=1.0, nu=0.5, n0=0.05, p_bar=40.0)
    line = run.line()
    assert abs(line.delta_x - 0.2) < 1e-15
    assert abs(line.per_terminal_power - 8.0) < 1e-12

    for bad in (
        RunConfig(lam=0.4, nu=0.5, n0=0.05, p_bar=40.0),
        RunConfig(lam=0.4, theta=1.0, delta_x=0.2, nu=0.5, n0=0.05, p_bar=40.0),
    ):
        try:
            bad.line()
            assert False, "expected ConfigError"
        except ConfigError:
            pass

    try:
        RunConfig(lam=0.4, delta_x=0.2, n0=0.05, p_bar=40.0).line()
        assert False, "expected ConfigError"
    except ConfigError as err:
        assert "'nu'" in str(err)


def test_experiment_builder(tmp_path):
    path = _write(tmp_path, "geometry: plane\ndims: [2.0, 1.0]\ndensity: 3.0\nlam: 0.4\nn0: 1.0\np_bar: 10.0\nseed: 11\n")
    run = resolve_run_config(path, {"rel_tol": 1e-6})
    cfg = run.experiment()
    assert cfg.dims == (2.0, 1.0)
    assert cfg.power == 10.0 and cfg.power_mode == "per_volume"
    assert cfg.base_seed == 11
    assert cfg.quadrature.rel_tol == 1e-6
    assert cfg.resolved_gram_mode == "sinc-approx"

    try:
        RunConfig(geometry="line", dims=(2.0,), lam=0.4, n0=1.0, p_bar=1.0).experiment()
        assert False, "expected ConfigError"
    except ConfigError as err:
        assert "density" in str(err)


def test_audit_grid():
    grid = resolve_run_config().audit_grid()
    assert len(grid) == 801
    assert grid[0] == 0.0 and abs(grid[-1] - 2.0) < 1e-12
    assert RunConfig(grid_points=1, grid_start=0.3).audit_grid() == [0.3]


if __name__ == "__main__":
    test_defaults_come_from_config_yaml()
    test_line_builder()
    test_audit_grid()
    print("All run config tests passed.")
