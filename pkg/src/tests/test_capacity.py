#!/usr/bin/env python3
"""Tests for the 1-D / 2-D capacity closed forms, their oracles and the finite-K capacities."""

import math
import sys
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

_SRC = Path(__file__).resolve().parents[1]
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from capacity import (  # noqa: E402
    LINE_SWEEP_COLUMNS,
    PLANE_SWEEP_COLUMNS,
    LineConfig,
    SlopeFitError,
    ZeroPowerUserError,
    capacity_1d_mf,
    capacity_1d_optimal,
    capacity_1d_optimal_numeric,
    capacity_2d,
    capacity_2d_numeric,
    dims_1d,
    dims_2d,
    fold_counts,
    folded_psd,
    highsnr_slope,
    interference_power,
    interference_series,
    line_sweep,
    mf_per_user_capacity,
    plane_sweep,
    psd_2d,
    sum_capacity_logdet,
)
from experiments import equispaced_line, grid_values  # noqa: E402
from fields import INF, NoiseModel, SurfaceSpec  # noqa: E402
from gram import GramMatrix, build_gram  # noqa: E402

SLOPE_GRID = grid_values({"start": 1.0, "stop": 1.0e6, "num": 61, "scale": "log"})
SWEEP_LINE = {"nu": 0.5, "n0": 0.05, "p_bar": 40.0}


def _line(theta, lam=0.4, **kwargs):
    params = {"nu": 0.5, "n0": 1.0, "power": 2.0}
    params.update(kwargs)
    return LineConfig.from_theta(theta, lam, **params)


def test_fold_counts():
    assert fold_counts(1.0) == (0.0, 1)
    assert fold_counts(0.5) == (0.0, 2)
    alpha, beta = fold_counts(2.0 / 3.0)
    assert beta == 1 and abs(alpha - 0.5) < 1e-15
    alpha, beta = fold_counts(3.0)
    assert beta == 0 and abs(alpha - 1.0 / 3.0) < 1e-15
    assert fold_counts(1.0 / (4.0 + 1e-14)) == (0.0, 4)


def test_folded_psd_levels():
    pnu = 2.0 * 0.5
    flat = folded_psd(_line(1.0))
    assert len(flat.levels) == 1
    assert abs(flat.levels[0][0] - pnu) < 1e-15 and flat.levels[0][1] == 1.0

    half = folded_psd(_line(0.5))
    assert len(half.levels) == 1 and abs(half.levels[0][0] - pnu) < 1e-12

    split = folded_psd(_line(2.0 / 3.0))
    (high, f_high), (low, f_low) = split.levels
    assert abs(high - 4.0 / 3.0 * pnu) < 1e-12 and abs(f_high - 0.5) < 1e-12
    assert abs(low - 2.0 / 3.0 * pnu) < 1e-12 and abs(f_low - 0.5) < 1e-12


def test_folded_psd_conserves_power():
    rng = np.random.default_rng(3)
    for theta in rng.uniform(0.05, 5.0, 50):
        cfg = _line(float(theta))
        psd = folded_psd(cfg)
        assert abs(sum(frac for _, frac in psd.levels) - 1.0) < 1e-12
        assert abs(psd.band_average() - cfg.received_power) < 1e-12 * cfg.received_power


def test_fold_counting_matches_levels_on_the_band():
    cfg = _line(0.3)
    psd = folded_psd(cfg)
    f = np.linspace(-0.5, 0.5, 200_001)
    values = psd.evaluate(f)
    (high, f_high), (low, _) = psd.levels
    assert set(np.unique(np.round(values / cfg.received_power, 9))) == {
        round(high / cfg.received_power, 9),
        round(low / cfg.received_power, 9),
    }
    assert abs(np.mean(np.isclose(values, high)) - f_high) < 1e-4


def test_closed_form_matches_psd_integration_for_random_theta():
    rng = np.random.default_rng(2024)
    for theta in 5.0 - rng.uniform(0.0, 4.95, 200):
        cfg = _line(float(theta), n0=0.3)
        closed = capacity_1d_optimal(cfg)
        numeric = capacity_1d_optimal_numeric(cfg)
        assert abs(closed - numeric) <= 1e-9 * closed


def test_integer_fold_capacity_is_interference_free():
    for n in (1, 2, 3, 4):
        cfg = _line(1.0 / n, n0=0.7)
        expected = math.log1p(cfg.received_power / cfg.n0)
        assert abs(capacity_1d_optimal(cfg) - expected) < 1e-12


def test_two_thirds_capacity_formula():
    lam, nu, n0, p_bar = 0.4, 0.5, 0.05, 40.0
    cfg = LineConfig.from_theta(2.0 / 3.0, lam, nu=nu, n0=n0, p_bar=p_bar)
    expected = 0.5 * math.log1p(lam * p_bar * nu / n0) + 0.5 * math.log1p(lam * p_bar * nu / (2 * n0))
    assert abs(capacity_1d_optimal(cfg) - expected) < 1e-12 * expected


def test_normalized_capacity_converges_to_one_as_wavelength_shrinks():
    cfg = LineConfig.from_theta(1.0, 1e-3, nu=0.1, n0=1.0, p_bar=10.0)
    c_bar = cfg.per_meter(capacity_1d_optimal(cfg))
    assert abs(c_bar - 1.0) < 0.01


def test_interference_spot_values():
    for theta, factor in ((2.0, 1.0), (2.0 / 3.0, 1.0 / 9.0)):
        cfg = _line(theta)
        expected = factor * cfg.received_power
        assert abs(interference_power(cfg) - expected) < 1e-6 * expected
    for n in (1, 2, 3, 4):
        assert interference_power(_line(1.0 / n)) == 0.0


def test_interference_matches_brute_force_series():
    rng = np.random.default_rng(17)
    for theta in 5.0 - rng.uniform(0.0, 4.95, 100):
        cfg = _line(float(theta))
        closed = interference_power(cfg)
        series = interference_series(cfg)
        assert series.terms == 10**6
        assert abs(closed - series.value) <= 1e-5 * abs(closed) + series.tail_bound


def test_mf_spot_value_at_quarter_wavelength():
    cfg = _line(2.0, n0=0.2)
    pnu = cfg.received_power
    assert abs(capacity_1d_mf(cfg) - math.log1p(pnu / (cfg.n0 + pnu))) < 1e-12


def test_mf_never_beats_optimal_and_ties_at_integer_folds():
    for theta in np.linspace(0.05, 5.0, 1000):
        cfg = LineConfig.from_theta(float(theta), 0.4, **SWEEP_LINE)
        opt, mf = capacity_1d_optimal(cfg), capacity_1d_mf(cfg)
        alpha, _ = cfg.folds
        assert mf <= opt + 1e-12
        if min(alpha, 1.0 - alpha) > 1e-4:
            assert opt - mf > 1e-9
    for n in range(1, 11):
        cfg = LineConfig.from_theta(1.0 / n, 0.4, **SWEEP_LINE)
        assert abs(capacity_1d_optimal(cfg) - capacity_1d_mf(cfg)) < 1e-9


def test_mf_normalized_capacity_peaks_only_at_integer_folds():
    lam = 0.4
    exact = [0.5 * n * lam for n in range(1, 7)]
    delta_xs = sorted(set(np.linspace(0.01, 1.2, 600).tolist()) | set(exact))
    sweep = line_sweep([(lam, dx) for dx in delta_xs], **SWEEP_LINE)
    c_bar = sweep["c_bar_mf"].to_numpy()
    inv_theta = 1.0 / sweep["theta"].to_numpy()
    peaks = [i for i in range(1, len(c_bar) - 1) if c_bar[i] > c_bar[i - 1] and c_bar[i] >= c_bar[i + 1]]
    assert peaks
    for i in peaks:
        assert abs(inv_theta[i] - round(inv_theta[i])) < 1e-9


def test_dims_1d():
    assert abs(dims_1d(0.4, 1.0) - 5.0) < 1e-12
    assert abs(dims_1d(0.4, 0.5) - 2.5) < 1e-12
    assert abs(dims_1d(0.4, 1e6) - 5.0) < 1e-12
    try:
        dims_1d(0.4, 0.0)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_psd_2d_values():
    lam = 0.4
    assert abs(psd_2d(0.0, lam) - lam**2 / (4 * math.pi)) < 1e-15
    assert psd_2d(2.0 / lam, lam) == 0.0
    assert psd_2d(1.0 / lam, lam) == math.inf
    try:
        psd_2d(-1.0, lam)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_capacity_2d_matches_radial_integral():
    for lam in (0.1, 0.4, 1.0):
        for snr in (1.0, 10.0, 100.0):
            closed = capacity_2d(lam, snr, 1.0)
            numeric = capacity_2d_numeric(lam, snr, 1.0)
            assert abs(closed - numeric) <= 1e-6 * closed


def test_capacity_2d_small_wavelength_limit():
    assert abs(capacity_2d(1e-4, 10.0, 1.0) - 5.0) < 0.05


def test_dims_2d():
    assert abs(dims_2d(0.4) - 19.634954084936208) < 1e-9
    assert abs(dims_2d(1.0) - math.pi) < 1e-15


def test_high_snr_slopes_recover_dimension_counts():
    for lam in (0.2, 0.4, 0.5):

        def c_bar_line(r, lam=lam):
            cfg = LineConfig.from_theta(1.0, lam, nu=0.5, n0=1.0, p_bar=r)
            return cfg.per_meter(capacity_1d_optimal(cfg))

        slope_1d = highsnr_slope(c_bar_line, SLOPE_GRID)
        assert abs(slope_1d - 2.0 / lam) < 0.02 * 2.0 / lam

        slope_2d = highsnr_slope(lambda r, lam=lam: capacity_2d(lam, r, 1.0), SLOPE_GRID)
        assert abs(slope_2d - dims_2d(lam)) < 0.02 * dims_2d(lam)


def test_slope_of_a_constant_is_zero():
    assert abs(highsnr_slope(lambda r: 3.0, SLOPE_GRID)) < 1e-10


def test_slope_fit_rejects_bad_grids():
    for grid in ([1e6], [1.0, 1e5], [1.0, 1e7, 1e6], [0.0, 1e6], [1.0, 1e6]):
        try:
            highsnr_slope(lambda r: math.log(r), grid)
            assert False, "expected SlopeFitError"
        except SlopeFitError:
            pass


def test_logdet_scalar_and_colocated_pair():
    noise = NoiseModel(0.5)
    single = GramMatrix(entries=np.array([[1.5 + 0j]]), lam=0.4, mode="sinc-approx")
    report = sum_capacity_logdet(single, noise, volume=2.0)
    assert abs(report.sum_capacity - math.log1p(3.0)) < 1e-15
    assert abs(report.space_normalized - math.log1p(3.0) / 2.0) < 1e-15

    pair = GramMatrix(entries=np.full((2, 2), 1.5 + 0j), lam=0.4, mode="sinc-approx")
    assert abs(sum_capacity_logdet(pair, noise).sum_capacity - math.log1p(6.0)) < 1e-12

    mf = mf_per_user_capacity(single, noise)
    assert abs(mf.per_user - math.log1p(3.0)) < 1e-15
    assert mf.per_user_values == (mf.per_user,)


def test_logdet_approaches_closed_form_as_line_grows():
    lam = 0.4
    cfg = LineConfig.from_theta(2.0 / 3.0, lam, nu=0.5, n0=0.1, power=1.0)
    target = capacity_1d_optimal(cfg)
    errors = []
    for k in (128, 512, 1024):
        line = equispaced_line(k, cfg.delta_x, 1.0, power=1.0)
        g = build_gram(line, SurfaceSpec(INF, INF), lam, mode="sinc-approx")
        errors.append(abs(sum_capacity_logdet(g, NoiseModel(0.1)).per_user - target) / target)
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.02


def test_mf_interior_users_on_long_lines():
    lam = 0.4
    for theta in (1.0, 2.0):
        cfg = LineConfig.from_theta(theta, lam, nu=0.5, n0=0.2, power=1.0)
        line = equispaced_line(401, cfg.delta_x, 1.0, power=1.0)
        g = build_gram(line, SurfaceSpec(INF, INF), lam, mode="sinc-approx")
        values = mf_per_user_capacity(g, NoiseModel(0.2)).per_user_values
        expected = capacity_1d_mf(cfg)
        assert abs(values[200] - expected) < 0.02 * expected
        if theta == 1.0:
            assert abs(values[200] - math.log1p(0.5 / 0.2)) < 1e-9


def test_mf_rejects_zero_power_users():
    g = GramMatrix(entries=np.diag([1.0, 0.0]).astype(complex), lam=0.4, mode="numeric")
    try:
        mf_per_user_capacity(g, NoiseModel(1.0))
        assert False, "expected ZeroPowerUserError"
    except ZeroPowerUserError as err:
        assert "User 1" in str(err)


def test_report_in_bits():
    report = sum_capacity_logdet(GramMatrix(entries=np.array([[1.0 + 0j]]), lam=1.0, mode="numeric"), NoiseModel(1.0))
    bits = report.in_bits()
    assert abs(bits.per_user - 1.0) < 1e-15
    assert bits.units == "bits/s/Hz"


def test_line_config_power_choice():
    for kwargs in ({}, {"p_bar": 1.0, "power": 1.0}):
        try:
            LineConfig(delta_x=0.2, lam=0.4, nu=0.5, n0=1.0, **kwargs)
            assert False, "expected ValueError"
        except ValueError:
            pass
    cfg = LineConfig(delta_x=0.25, lam=0.4, nu=0.5, n0=1.0, p_bar=8.0)
    assert cfg.per_terminal_power == 2.0
    assert abs(cfg.theta - 0.8) < 1e-15


def test_sweep_tables():
    sweep = line_sweep([(0.4, 0.2), (0.4, 0.3)], **SWEEP_LINE)
    assert list(sweep.columns) == LINE_SWEEP_COLUMNS
    assert abs(sweep["c_opt"].iloc[0] - sweep["c_mf"].iloc[0]) < 1e-12

    plane = plane_sweep([0.4], [1.0, 10.0], SLOPE_GRID)
    assert list(plane.columns) == PLANE_SWEEP_COLUMNS
    assert len(plane) == 2
    assert abs(plane["slope"].iloc[0] - dims_2d(0.4)) < 0.02 * dims_2d(0.4)


@settings(max_examples=50, deadline=None)
@given(
    theta=st.floats(min_value=0.05, max_value=5.0),
    p_bar=st.floats(min_value=0.01, max_value=1e4),
    grow=st.floats(min_value=1.01, max_value=10.0),
)
def test_capacities_increase_with_power(theta, p_bar, grow):
    low = LineConfig.from_theta(theta, 0.4, nu=0.3, n0=1.0, p_bar=p_bar)
    high = LineConfig.from_theta(theta, 0.4, nu=0.3, n0=1.0, p_bar=p_bar * grow)
    assert capacity_1d_optimal(high) > capacity_1d_optimal(low)
    assert capacity_1d_mf(high) >= capacity_1d_mf(low)
    assert capacity_1d_mf(low) <= capacity_1d_optimal(low) + 1e-12
    assert capacity_2d(0.4, p_bar * grow, 1.0) > capacity_2d(0.4, p_bar, 1.0)


if __name__ == "__main__":
    test_fold_counts()
    test_folded_psd_levels()
    test_closed_form_matches_psd_integration_for_random_theta()
    test_normalized_capacity_converges_to_one_as_wavelength_shrinks()
    test_interference_spot_values()
    test_mf_never_beats_optimal_and_ties_at_integer_folds()
    test_capacity_2d_matches_radial_integral()
    test_high_snr_slopes_recover_dimension_counts()
    test_logdet_approaches_closed_form_as_line_grows()
    print("All capacity tests passed.")
