import math

import pytest

from invest_exit.exceptions import ParameterError
from invest_exit.services.asymptotics import (
    initial_gap_guess,
    large_b_expansion,
    large_b_slopes,
    small_g_constant,
    small_g_expansion,
    small_g_p_invest_log_slope,
    solve_theta,
    theta_derivatives,
    theta_residual,
    theta_z,
)
from invest_exit.services.core_model import exit_models
from invest_exit.services.threshold_solver import solve_thresholds


def fixed_point_theta(p, iterations=500):
    pre, post = exit_models(p)
    offset = p.alpha * p.k - p.delta / p.alpha + pre.xi - post.xi
    theta = 0.0
    for _ in range(iterations):
        theta = -1.0 / pre.phi + math.exp(post.phi * (theta + offset)) / post.phi
    return theta


def test_theta_at_reference_parameters(base_params):
    theta = solve_theta(base_params)
    assert theta == pytest.approx(0.840, abs=0.01)
    assert theta == pytest.approx(fixed_point_theta(base_params), abs=1e-10)
    assert abs(theta_residual(base_params, theta)) < 1e-12


def test_theta_bounds_and_z_sign(base_params):
    pre, _ = exit_models(base_params)
    theta, z = theta_z(base_params)
    assert 0.0 < theta < -1.0 / pre.phi
    assert z > 0.0


def test_theta_independent_of_boost(base_params):
    theta = solve_theta(base_params)
    for b in (2.0, 30.0, 100.0):
        assert solve_theta(base_params.replace(b=b)) == pytest.approx(theta, abs=1e-12)


def test_bisect_theta_matches(base_params):
    assert solve_theta(base_params, method="bisect") == pytest.approx(solve_theta(base_params), abs=1e-12)


def test_small_g_constant_positive_in_both_branches(base_params):
    assert small_g_constant(base_params) > 0.0
    no_boost = base_params.replace(delta=0.0)
    assert small_g_constant(no_boost) > 0.0
    assert small_g_constant(no_boost) != small_g_constant(base_params.replace(delta=1e-9))


def test_small_g_exponent_and_vanishing_exit_gap(base_params):
    pre, _ = exit_models(base_params)
    assert 1.0 - pre.psi / pre.phi > 0.0
    gaps = [abs(small_g_expansion(base_params.with_g(g)).delta_E0_approx) for g in (1e-2, 1e-3, 1e-4)]
    assert gaps[0] > gaps[1] > gaps[2] > 0.0


def test_expansions_reject_nonpositive_gain(base_params):
    for expansion in (small_g_expansion, large_b_expansion):
        with pytest.raises(ParameterError):
            expansion(base_params.with_g(0.0))
        with pytest.raises(ParameterError):
            expansion(base_params.with_g(-0.5))


def test_small_g_expansion_matches_solver_gap(base_params):
    errors = []
    for g in (1e-2, 1e-3, 1e-4):
        p = base_params.with_g(g)
        report = small_g_expansion(p)
        sol = solve_thresholds(p)
        assert report.in_regime
        errors.append(abs(sol.delta_IE / report.delta_IE_approx - 1.0))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.15


def test_small_g_expansion_matches_solver_exit_shift(base_params):
    # Delta_E0 converges like a power of g close to zero; a larger drift boost speeds that up
    p = base_params.replace(delta=0.5).with_g(1e-4)
    sol = solve_thresholds(p)
    report = small_g_expansion(p)
    assert sol.delta_E0 < 0.0
    assert sol.delta_E0 / report.delta_E0_approx == pytest.approx(1.0, abs=0.25)


def test_large_b_expansion_matches_solver(base_params):
    pre, post = exit_models(base_params)
    theta = solve_theta(base_params)
    limit = (post.phi * theta + post.phi / pre.phi - 1.0) / (pre.psi * pre.phi)

    exit_errors = []
    for b in (10.0, 30.0, 100.0):
        p = base_params.replace(b=b)
        sol = solve_thresholds(p)
        exit_errors.append(abs(sol.delta_E0 + p.g - theta))
    assert exit_errors[0] > exit_errors[1] > exit_errors[2]
    assert exit_errors[2] < 1e-2

    p = base_params.replace(b=100.0)
    sol = solve_thresholds(p)
    report = large_b_expansion(p)
    assert report.in_regime
    assert report.delta_IE_approx > 0.0
    assert sol.delta_IE * p.g == pytest.approx(limit, rel=0.05)
    assert report.theta == pytest.approx(theta)


def test_theta_derivatives_match_finite_differences(base_params):
    h = 1e-5
    d_sigma2, d_mu = theta_derivatives(base_params)
    fd_sigma2 = (
        solve_theta(base_params.with_sigma2(base_params.sigma2 + h))
        - solve_theta(base_params.with_sigma2(base_params.sigma2 - h))
    ) / (2 * h)
    fd_mu = (
        solve_theta(base_params.replace(mu=base_params.mu + h))
        - solve_theta(base_params.replace(mu=base_params.mu - h))
    ) / (2 * h)
    assert d_sigma2 == pytest.approx(fd_sigma2, rel=1e-4)
    assert d_mu == pytest.approx(fd_mu, rel=1e-4)


def test_theta_derivatives_without_drift_boost(base_params):
    d_sigma2, d_mu = theta_derivatives(base_params.replace(delta=0.0))
    assert math.isfinite(d_sigma2) and math.isfinite(d_mu)


def test_large_b_exit_slope_is_negative(base_params):
    d_xiE_d_sigma2, _ = large_b_slopes(base_params.replace(b=100.0))
    assert d_xiE_d_sigma2 < 0.0


def test_small_g_p_invest_slope_positive(base_params):
    assert small_g_p_invest_log_slope(base_params.with_g(0.05)) > 0.0


def test_initial_gap_guess_regimes(base_params):
    assert initial_gap_guess(base_params.with_g(0.01))[1] == "small_g"
    assert initial_gap_guess(base_params.with_g(0.6)) == (50.0, "default")
    assert initial_gap_guess(base_params.replace(b=100.0))[1] == "large_b"
