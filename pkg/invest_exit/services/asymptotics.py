"""Leading-order expansions of the threshold gaps for small g and large b."""

import math
from typing import Tuple

from invest_exit.exceptions import ConvergenceFailure, ParameterError
from invest_exit.logging_config import logger
from invest_exit.schemas import AsymptoticReport, ModelParams
from invest_exit.services.core_model import exit_models, exponent_derivatives, find_root

SMALL_G_GATE = 0.1
# Large-b expansion linearises exp(-gamma_p * Delta_IE); require the gap to be short on that scale
LARGE_B_GATE = 0.05
THETA_TOL = 1e-12


def _theta_exponent_offset(p: ModelParams) -> float:
    """alpha k - delta/alpha + xi0 - xi1."""
    pre, post = exit_models(p)
    return p.alpha * p.k - p.delta / p.alpha + pre.xi - post.xi


def theta_residual(p: ModelParams, theta: float) -> float:
    """theta - RHS of the fixed-point equation defining theta."""
    pre, post = exit_models(p)
    gamma_n, lam = pre.phi, post.phi
    return theta + 1.0 / gamma_n - math.exp(lam * (theta + _theta_exponent_offset(p))) / lam


def solve_theta(p: ModelParams, method: str = "brentq") -> float:
    """The positive constant theta of the large-b expansion.

    The right-hand side is increasing in theta and bounded by -1/gamma_n, so
    the root lies in [0, -1/gamma_n].
    """
    pre, _ = exit_models(p)
    lo, hi = 0.0, -1.0 / pre.phi

    f_lo = theta_residual(p, lo)
    if f_lo >= 0.0:
        raise ConvergenceFailure("theta: no sign change on [0, -1/gamma_n]", {"f_lo": f_lo, "hi": hi})

    theta, calls = find_root(lambda t: theta_residual(p, t), lo, hi, xtol=1e-15, method=method, what="theta")
    residual = theta_residual(p, theta)
    if abs(residual) > THETA_TOL:
        raise ConvergenceFailure("theta: residual above tolerance", {"theta": theta, "residual": residual})

    logger.debug("Solved theta", theta=theta, function_calls=calls)
    return theta


def theta_z(p: ModelParams, theta: float = None) -> Tuple[float, float]:
    """(theta, z) with z = -lambda (theta + alpha k + 1/gamma_n - 1/lambda)."""
    pre, post = exit_models(p)
    if theta is None:
        theta = solve_theta(p)
    lam = post.phi
    z = -lam * (theta + p.alpha * p.k + 1.0 / pre.phi - 1.0 / lam)
    return theta, z


def small_g_constant(p: ModelParams) -> float:
    """C(delta); the delta = 0 branch carries the extra (1 - exp(gamma_n b)) factor."""
    pre, _ = exit_models(p)
    gamma_p, gamma_n = pre.psi, pre.phi
    base = 1.0 / gamma_p - 1.0 / gamma_n
    if p.delta == 0.0:
        base *= -math.expm1(gamma_n * p.b)
    return base ** (gamma_p / gamma_n)


def small_g_expansion(p: ModelParams) -> AsymptoticReport:
    """Delta_E0 ~ -g^(1 - gamma_p/gamma_n) C(delta), Delta_IE ~ ln(1/g) / |gamma_n|."""
    if not p.g > 0.0:
        raise ParameterError(f"small-g expansion requires g > 0, got {p.g}")
    pre, _ = exit_models(p)
    gamma_p, gamma_n = pre.psi, pre.phi
    c_delta = small_g_constant(p)
    return AsymptoticReport(
        regime="small_g",
        g=p.g,
        delta_E0_approx=-(p.g ** (1.0 - gamma_p / gamma_n)) * c_delta,
        delta_IE_approx=-math.log(1.0 / p.g) / gamma_n,
        c_delta=c_delta,
        in_regime=p.g < SMALL_G_GATE,
    )


def large_b_expansion(p: ModelParams) -> AsymptoticReport:
    """Delta_E0 ~ theta - g, Delta_IE ~ (1 - lambda theta - lambda/gamma_n) / (-g gamma_p gamma_n)."""
    if not p.g > 0.0:
        raise ParameterError(f"large-b expansion requires g > 0, got {p.g}")
    pre, post = exit_models(p)
    gamma_p, gamma_n, lam = pre.psi, pre.phi, post.phi
    theta, z = theta_z(p)
    delta_IE = -(1.0 - lam * theta - lam / gamma_n) / (p.g * gamma_p * gamma_n)
    return AsymptoticReport(
        regime="large_b",
        g=p.g,
        delta_E0_approx=-p.g + theta,
        delta_IE_approx=delta_IE,
        theta=theta,
        z=z,
        in_regime=gamma_p * abs(delta_IE) < LARGE_B_GATE,
    )


def theta_derivatives(p: ModelParams) -> Tuple[float, float]:
    """(d theta / d sigma^2, d theta / d mu) by implicit differentiation."""
    pre, post = exit_models(p)
    gamma_n, lam = pre.phi, post.phi
    theta = solve_theta(p)
    w = theta + p.alpha * p.k + 1.0 / gamma_n - 1.0 / lam
    weight = math.exp(lam * w) / -math.expm1(lam * w)

    d_pre = exponent_derivatives(p.mu, p.alpha, p.sigma)
    d_post = exponent_derivatives(p.mu + p.delta, p.alpha, p.sigma)

    d_sigma2 = d_pre.dphi_dsigma2 / gamma_n**2 + weight * w * d_post.dphi_dsigma2 / lam
    d_mu = d_pre.dphi_dnu / gamma_n**2 + weight * w * d_post.dphi_dnu / lam
    return d_sigma2, d_mu


def large_b_slopes(p: ModelParams) -> Tuple[float, float]:
    """Leading terms of (d xi_E / d sigma^2, d xi_I / d mu) as b grows.

    d xi_I / d sigma^2 shares the first leading term.
    """
    _, post = exit_models(p)
    lam = post.phi
    _, z = theta_z(p)
    d_post = exponent_derivatives(p.mu + p.delta, p.alpha, p.sigma)
    weight = z / math.expm1(z) / lam**2
    return -weight * d_post.dphi_dsigma2, -1.0 / p.alpha - weight * d_post.dphi_dnu


def small_g_p_invest_log_slope(p: ModelParams) -> float:
    """Leading term of (d p_I / d sigma^2) / p_I for small g."""
    if not p.g > 0.0:
        raise ParameterError(f"requires g > 0, got {p.g}")
    root = math.sqrt(p.mu**2 + 2.0 * p.alpha * p.sigma2)
    return math.log(p.g) * 2.0 * p.mu * p.alpha / ((p.mu + root) ** 2 * root)


def initial_gap_guess(p: ModelParams) -> Tuple[float, str]:
    """Starting upper bracket for Delta_IE and the regime it came from."""
    if p.g < SMALL_G_GATE:
        return small_g_expansion(p).delta_IE_approx, "small_g"
    if p.g > 10.0:
        try:
            return large_b_expansion(p).delta_IE_approx, "large_b"
        except ConvergenceFailure:
            pass
    return 50.0, "default"
