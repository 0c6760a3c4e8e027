import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invest_exit.exceptions import ParameterError
from invest_exit.schemas import ModelParams
from invest_exit.services.core_model import (
    apply_generator,
    break_even_rate,
    delta_v,
    demand_to_params,
    exit_value,
    exit_value_derivatives,
    exponent_derivatives,
    investment_terms,
    make_exit_model,
    reward_h,
    reward_h_derivatives,
)

DRIFTS = st.floats(min_value=-5.0, max_value=5.0)
NEGATIVE_DRIFTS = st.floats(min_value=-3.0, max_value=-0.05)
RATES = st.floats(min_value=0.05, max_value=5.0)
VARIANCES = st.floats(min_value=0.05, max_value=5.0)


def test_reference_exponents_and_thresholds():
    pre = make_exit_model(-1.0, 1.0, math.sqrt(0.5))
    post = make_exit_model(-0.9, 1.0, math.sqrt(0.5))

    assert pre.psi == pytest.approx(4.828427, abs=1e-5)
    assert pre.phi == pytest.approx(-0.828427, abs=1e-5)
    assert pre.xi == pytest.approx(-0.207107, abs=1e-5)
    assert post.phi == pytest.approx(-0.890724, abs=1e-5)
    assert post.xi == pytest.approx(-0.222682, abs=1e-5)


def test_zero_drift_is_symmetric():
    model = make_exit_model(0.0, 1.0, math.sqrt(2.0))
    assert model.psi == pytest.approx(1.0, rel=1e-15)
    assert model.phi == pytest.approx(-1.0, rel=1e-15)
    assert model.xi == pytest.approx(-1.0, rel=1e-15)


@pytest.mark.parametrize("alpha,sigma", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -0.5), (math.nan, 1.0)])
def test_invalid_exit_model_inputs(alpha, sigma):
    with pytest.raises(ParameterError):
        make_exit_model(-1.0, alpha, sigma)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(alpha=0.0, mu=-1.0, sigma2=1.0, delta=0.1, b=1.0, k=0.5),
        dict(alpha=1.0, mu=-1.0, sigma2=0.0, delta=0.1, b=1.0, k=0.5),
        dict(alpha=1.0, mu=-1.0, sigma2=1.0, delta=-0.1, b=1.0, k=0.5),
        dict(alpha=1.0, mu=-1.0, sigma2=1.0, delta=0.1, b=1.0, k=0.0),
    ],
)
def test_model_params_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_variance_is_stored_as_given(base_params):
    assert base_params.sigma2 == 0.5
    assert base_params.with_sigma2(0.3).sigma2 == 0.3
    assert base_params.replace(sigma2=0.7).sigma2 == 0.7
    assert base_params.sigma == pytest.approx(math.sqrt(0.5), rel=1e-15)


def test_derived_gain_and_declining_flag(base_params):
    assert base_params.g == pytest.approx(0.6, abs=1e-15)
    assert base_params.declining
    assert not base_params.replace(mu=-0.05).declining
    assert ModelParams.from_g(0.6, alpha=1.0, mu=-1.0, sigma2=base_params.sigma2, delta=0.1, k=0.5).b == pytest.approx(1.0)


@settings(max_examples=200)
@given(DRIFTS, RATES, VARIANCES)
def test_roots_solve_the_quadratic(nu, alpha, sigma2):
    model = make_exit_model(nu, alpha, math.sqrt(sigma2))
    for m in (model.psi, model.phi):
        residual = -alpha + nu * m + 0.5 * sigma2 * m * m
        scale = max(alpha, abs(nu * m), 0.5 * sigma2 * m * m)
        assert abs(residual) < 1e-12 * scale
    assert model.psi > 0.0 > model.phi
    assert model.xi < 0.0


@given(DRIFTS, RATES, VARIANCES)
def test_threshold_matches_closed_form(nu, alpha, sigma2):
    model = make_exit_model(nu, alpha, math.sqrt(sigma2))
    closed = sigma2 / (nu - math.sqrt(nu * nu + 2.0 * alpha * sigma2))
    assert model.xi == -1.0 / model.psi
    assert model.xi == pytest.approx(closed, rel=1e-9)


@given(NEGATIVE_DRIFTS, RATES, VARIANCES)
def test_monotonicity_in_parameters(nu, alpha, sigma2):
    h = 1e-3
    base = make_exit_model(nu, alpha, math.sqrt(sigma2))
    more_var = make_exit_model(nu, alpha, math.sqrt(sigma2 + h))
    more_drift = make_exit_model(nu + h, alpha, math.sqrt(sigma2))
    more_rate = make_exit_model(nu, alpha + h, math.sqrt(sigma2))

    assert more_var.psi < base.psi and more_var.phi > base.phi and more_var.xi < base.xi
    assert more_drift.psi < base.psi and more_drift.phi < base.phi and more_drift.xi < base.xi
    assert more_rate.psi > base.psi and more_rate.phi < base.phi and more_rate.xi > base.xi

    xs = base.xi + np.linspace(0.01, 3.0, 25)
    assert np.all(np.asarray(exit_value(more_var, xs)) >= np.asarray(exit_value(base, xs)))
    assert np.all(np.asarray(exit_value(more_drift, xs)) >= np.asarray(exit_value(base, xs)))


def test_reference_exit_value_at_zero():
    model = make_exit_model(-1.0, 1.0, math.sqrt(0.5))
    assert exit_value(model, 0.0) == pytest.approx(0.0168, abs=1e-4)
    assert exit_value(model, model.xi) == 0.0
    assert exit_value(model, model.xi - 1.0) == 0.0


def test_exit_value_approaches_asymptote():
    model = make_exit_model(-1.0, 1.0, math.sqrt(0.5))
    xs = np.array([0.5, 1.0, 2.0, 5.0])
    # The exit option is worth a positive, vanishing premium over the never-exit return
    gaps = np.asarray(exit_value(model, xs)) - (xs + model.nu)
    assert np.all(gaps > 0.0)
    assert np.all(np.diff(gaps) < 0.0)
    assert exit_value(model, 60.0) == pytest.approx(60.0 + model.nu, abs=1e-13)


@given(NEGATIVE_DRIFTS, st.floats(min_value=0.2, max_value=5.0), VARIANCES)
def test_exit_value_convex_nondecreasing(nu, alpha, sigma2):
    model = make_exit_model(nu, alpha, math.sqrt(sigma2))
    xs = np.linspace(model.xi - 1.0, model.xi + 4.0, 801)
    values = np.asarray(exit_value(model, xs))
    tol = 1e-12 * max(1.0, abs(nu) / alpha**2, float(np.max(np.abs(values))))
    assert np.all(np.diff(values) >= -tol)
    assert np.all(values[:-2] - 2.0 * values[1:-1] + values[2:] >= -tol)


def test_exit_value_is_smooth_at_threshold():
    model = make_exit_model(-1.0, 1.0, math.sqrt(0.5))
    step = 1e-6
    right = (exit_value(model, model.xi + step) - exit_value(model, model.xi)) / step
    left = (exit_value(model, model.xi) - exit_value(model, model.xi - step)) / step
    curvature = -model.phi / model.alpha
    assert left == 0.0
    assert abs(right - left) <= curvature * step


def test_exit_value_derivatives_match_differences():
    model = make_exit_model(-1.0, 1.0, math.sqrt(0.5))
    xs = np.array([-0.1, 0.0, 0.5, 2.0])
    h = 1e-5
    d1, d2 = exit_value_derivatives(model, xs)
    fd1 = (np.asarray(exit_value(model, xs + h)) - np.asarray(exit_value(model, xs - h))) / (2 * h)
    fd2 = (np.asarray(exit_value(model, xs + h)) - 2 * np.asarray(exit_value(model, xs)) + np.asarray(exit_value(model, xs - h))) / h**2
    np.testing.assert_allclose(d1, fd1, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(d2, fd2, rtol=1e-4, atol=1e-5)


def test_exit_value_satisfies_generator_equation():
    p = ModelParams.from_sigma2(0.5, alpha=1.0, mu=-1.0, delta=0.0, b=1.0, k=0.5)
    model = make_exit_model(p.mu, p.alpha, p.sigma)
    xs = np.linspace(model.xi + 0.01, 3.0, 50)
    d1, d2 = exit_value_derivatives(model, xs)
    np.testing.assert_allclose(apply_generator(p, exit_value(model, xs), d1, d2), -xs, atol=1e-12)


def test_investment_terms(base_params):
    terms = investment_terms(base_params)
    post = make_exit_model(-0.9, 1.0, base_params.sigma)

    assert not terms.never_invest
    assert exit_value(post, terms.x_plus + base_params.b) == pytest.approx(base_params.k, abs=1e-12)
    assert terms.x_plus == pytest.approx(0.0332, abs=5e-4)
    assert terms.xi1 == pytest.approx(-0.222682, abs=1e-5)
    assert terms.xi1 <= terms.xi0
    assert terms.lam < terms.gamma_n < 0.0
    assert terms.lam / terms.gamma_n >= 1.0


def test_investment_terms_never_invest():
    p = ModelParams.from_sigma2(0.5, alpha=1.0, mu=-1.0, delta=0.1, b=0.2, k=0.5)
    terms = investment_terms(p)
    assert p.g < 0.0
    assert terms.never_invest
    assert terms.x_plus is None


def test_reward_h_kink_and_values(base_params):
    x_plus = break_even_rate(base_params)
    post = make_exit_model(-0.9, 1.0, base_params.sigma)

    assert reward_h(base_params, x_plus - 0.5) == 0.0
    assert reward_h(base_params, x_plus) == pytest.approx(0.0, abs=1e-12)
    assert reward_h(base_params, 1.0) == pytest.approx(exit_value(post, 2.0) - 0.5, abs=1e-15)

    d1, _ = reward_h_derivatives(base_params, x_plus + 1e-9)
    assert d1 > 0.0

    xs = np.linspace(x_plus - 2.0, x_plus + 3.0, 501)
    h = np.asarray(reward_h(base_params, xs))
    assert np.all(h >= 0.0)
    assert np.all(np.diff(h) >= -1e-15)
    assert np.all(h[:-2] - 2 * h[1:-1] + h[2:] >= -1e-12)


def test_delta_v_matches_direct_difference(base_params):
    pre = make_exit_model(-1.0, 1.0, base_params.sigma)
    x_plus = break_even_rate(base_params)
    xs = np.linspace(x_plus + 1e-3, x_plus + 6.0, 200)
    direct = np.asarray(reward_h(base_params, xs)) - np.asarray(exit_value(pre, xs))
    np.testing.assert_allclose(delta_v(base_params, xs), direct, rtol=1e-10, atol=1e-12)


def test_delta_v_tends_to_gain_rate(base_params):
    assert delta_v(base_params, 60.0) == pytest.approx(base_params.g / base_params.alpha, rel=1e-12)


def test_delta_v_rejects_points_below_break_even(base_params):
    with pytest.raises(ParameterError):
        delta_v(base_params, break_even_rate(base_params))


@settings(max_examples=40, deadline=None)
@given(
    st.floats(min_value=-2.0, max_value=-0.01),
    st.floats(min_value=0.2, max_value=5.0),
    st.floats(min_value=-2.0, max_value=-0.05),
    st.floats(min_value=0.01, max_value=2.0),
    st.floats(min_value=0.0, max_value=0.99),
    st.floats(min_value=0.01, max_value=1.0),
)
def test_negative_gain_never_pays(g, alpha, mu, sigma2, boost_share, k):
    from invest_exit.services.threshold_solver import solve_thresholds
    from invest_exit.schemas import NeverInvest

    p = ModelParams.from_sigma2(sigma2, alpha=alpha, mu=mu, delta=boost_share * -mu, b=0.0, k=k).with_g(g)
    assert isinstance(solve_thresholds(p), NeverInvest)

    x_plus = break_even_rate(p)
    xs = np.linspace(x_plus, x_plus + 10.0, 400)[1:]
    assert np.all(np.asarray(delta_v(p, xs)) < 0.0)


@pytest.mark.parametrize(
    "price,cost,drift,d0,expected",
    [
        (1.0, 0.0, -1.0, 0.0, (-1.0, 0.0)),
        (2.0, 1.0, -0.5, 1.0, (-1.0, 1.0)),
        (0.5, 0.2, 0.0, 0.4, (0.0, 0.0)),
    ],
)
def test_demand_to_params(price, cost, drift, d0, expected):
    assert demand_to_params(price, cost, drift, d0) == pytest.approx(expected, abs=1e-15)


def test_demand_to_params_rejects_nonpositive_price():
    with pytest.raises(ParameterError):
        demand_to_params(0.0, 0.0, -1.0, 0.0)


@settings(max_examples=25)
@given(
    st.floats(min_value=-3.0, max_value=3.0),
    st.floats(min_value=0.2, max_value=3.0),
    st.floats(min_value=0.2, max_value=3.0),
)
def test_exponent_derivatives_match_finite_differences(nu, alpha, sigma2):
    h = 1e-6
    table = exponent_derivatives(nu, alpha, math.sqrt(sigma2))

    def roots(nu_, alpha_, sigma2_):
        model = make_exit_model(nu_, alpha_, math.sqrt(sigma2_))
        return np.array([model.psi, model.phi])

    d_sigma2 = (roots(nu, alpha, sigma2 + h) - roots(nu, alpha, sigma2 - h)) / (2 * h)
    d_nu = (roots(nu + h, alpha, sigma2) - roots(nu - h, alpha, sigma2)) / (2 * h)
    d_alpha = (roots(nu, alpha + h, sigma2) - roots(nu, alpha - h, sigma2)) / (2 * h)

    np.testing.assert_allclose([table.dpsi_dsigma2, table.dphi_dsigma2], d_sigma2, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose([table.dpsi_dnu, table.dphi_dnu], d_nu, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose([table.dpsi_dalpha, table.dphi_dalpha], d_alpha, rtol=1e-6, atol=1e-8)


def test_exponent_derivative_signs():
    table = exponent_derivatives(-1.0, 1.0, math.sqrt(0.5))
    assert table.dpsi_dsigma2 < 0.0 < table.dphi_dsigma2
    assert table.dpsi_dnu < 0.0 and table.dphi_dnu < 0.0
    assert table.dpsi_dalpha == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-15)
    assert table.dphi_dalpha < 0.0
