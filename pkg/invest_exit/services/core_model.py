"""Closed-form quantities of the single-drift exit problem and the investment reward."""

import math
from functools import lru_cache
from typing import Callable, Tuple, Union

import numpy as np
from scipy import optimize

from invest_exit.exceptions import ConvergenceFailure, ParameterError
from invest_exit.logging_config import logger
from invest_exit.schemas import ExitModel, ExponentDerivatives, InvestmentTerms, ModelParams

ArrayLike = Union[float, np.ndarray]

# exp() arguments below this are treated as exactly zero
EXP_FLOOR = -700.0


def _exp_clamped(arg: np.ndarray) -> np.ndarray:
    arg = np.asarray(arg, dtype=float)
    return np.where(arg < EXP_FLOOR, 0.0, np.exp(np.clip(arg, EXP_FLOOR, -EXP_FLOOR)))


def _restore(values: np.ndarray, like) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(values)
    return values


def find_root(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float,
    method: str = "brentq",
    maxiter: int = 200,
    what: str = "root",
) -> Tuple[float, int]:
    """Bracketed 1-D root search; returns (root, function calls)."""
    solver = optimize.brentq if method == "brentq" else optimize.bisect
    try:
        root, info = solver(func, lo, hi, xtol=xtol, maxiter=maxiter, full_output=True, disp=False)
    except ValueError as e:
        raise ConvergenceFailure(f"{what}: bracket does not straddle a root", {"lo": lo, "hi": hi, "error": str(e)})
    if not info.converged:
        raise ConvergenceFailure(
            f"{what}: root search did not converge",
            {"lo": lo, "hi": hi, "iterations": info.iterations, "flag": info.flag},
        )
    return root, info.function_calls


def make_exit_model(nu: float, alpha: float, sigma: float) -> ExitModel:
    """Exponents psi/phi and exit threshold xi for drift `nu`.

    Both roots solve -alpha + nu*m + sigma^2 m^2 / 2 = 0. The root whose
    closed form would cancel is recovered from psi*phi = -2 alpha / sigma^2.
    """
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if not math.isfinite(nu):
        raise ParameterError(f"drift must be finite, got {nu}")

    sigma2 = sigma * sigma
    root = math.sqrt(nu * nu + 2.0 * alpha * sigma2)
    product = -2.0 * alpha / sigma2
    if nu <= 0.0:
        psi = (-nu + root) / sigma2
        phi = product / psi
    else:
        phi = (-nu - root) / sigma2
        psi = product / phi

    return ExitModel(nu=nu, alpha=alpha, sigma=sigma, psi=psi, phi=phi, xi=-1.0 / psi)


def exit_value(model: ExitModel, x: ArrayLike) -> ArrayLike:
    """Optimal return V(x; nu) of the exit problem; zero at and below the threshold."""
    xs = np.asarray(x, dtype=float)
    alpha, phi = model.alpha, model.phi
    tail = _exp_clamped(phi * (xs - model.xi))
    inside = xs / alpha + model.nu / alpha**2 - tail / (alpha * phi)
    return _restore(np.where(xs > model.xi, inside, 0.0), x)


def exit_value_derivatives(model: ExitModel, x: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """First and second derivatives of V(x; nu)."""
    xs = np.asarray(x, dtype=float)
    alpha, phi = model.alpha, model.phi
    tail = _exp_clamped(phi * (xs - model.xi))
    above = xs > model.xi
    d1 = np.where(above, (1.0 - tail) / alpha, 0.0)
    d2 = np.where(above, -phi * tail / alpha, 0.0)
    return _restore(d1, x), _restore(d2, x)


@lru_cache(maxsize=4096)
def exit_models(p: ModelParams) -> Tuple[ExitModel, ExitModel]:
    """Exit problems before (drift mu) and after (drift mu + delta) investment."""
    return (
        make_exit_model(p.mu, p.alpha, p.sigma),
        make_exit_model(p.mu + p.delta, p.alpha, p.sigma),
    )


@lru_cache(maxsize=4096)
def break_even_rate(p: ModelParams, method: str = "brentq") -> float:
    """The rate x+ at which immediate investment is worth exactly zero.

    Defined for every sign of g; investment_terms hides it when g <= 0.
    """
    _, post = exit_models(p)

    def net(x: float) -> float:
        return exit_value(post, x + p.b) - p.k

    lo = post.xi - p.b
    width = 1.0
    hi = lo + width
    expansions = 0
    while net(hi) <= 0.0:
        width *= 2.0
        hi = lo + width
        expansions += 1
        if expansions > 200:
            raise ConvergenceFailure("x_plus: bracket expansion failed", {"lo": lo, "hi": hi})

    tol = 1e-12 * max(1.0, p.k)
    root, _ = find_root(net, lo, hi, xtol=1e-15, method=method, maxiter=500, what="x_plus")
    if abs(net(root)) > tol:
        # Plain bisection down to float resolution
        a, b = lo, hi
        for _ in range(2000):
            mid = 0.5 * (a + b)
            if mid in (a, b):
                break
            if net(mid) > 0.0:
                b = mid
            else:
                a = mid
        root = b
        if abs(net(root)) > tol:
            raise ConvergenceFailure("x_plus: residual above tolerance", {"residual": net(root), "tol": tol})
    return root


def investment_terms(p: ModelParams) -> InvestmentTerms:
    """g, x+ and the post-investment exit threshold."""
    pre, post = exit_models(p)
    never = p.g <= 0.0
    x_plus = None if never else break_even_rate(p)
    if never:
        logger.debug("Investment never optimal", g=p.g)
    return InvestmentTerms(
        g=p.g,
        x_plus=x_plus,
        xi0=pre.xi,
        xi1=post.xi,
        gamma_p=pre.psi,
        gamma_n=pre.phi,
        lam=post.phi,
        never_invest=never,
    )


def reward_h(p: ModelParams, x: ArrayLike) -> ArrayLike:
    """Lump-sum payoff max{0, V0+(x + b) - k} on stopping at x."""
    _, post = exit_models(p)
    xs = np.asarray(x, dtype=float)
    values = np.maximum(0.0, np.asarray(exit_value(post, xs + p.b)) - p.k)
    return _restore(values, x)


def reward_h_derivatives(p: ModelParams, x: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """h'(x) and h''(x); right-continuous at the kink x+."""
    _, post = exit_models(p)
    xs = np.asarray(x, dtype=float)
    positive = np.asarray(exit_value(post, xs + p.b)) - p.k > 0.0
    d1, d2 = exit_value_derivatives(post, xs + p.b)
    return (
        _restore(np.where(positive, d1, 0.0), x),
        _restore(np.where(positive, d2, 0.0), x),
    )


def delta_v(p: ModelParams, x: ArrayLike) -> ArrayLike:
    """Immediate-investment return minus the exit-only return, for x > x+."""
    pre, post = exit_models(p)
    x_plus = break_even_rate(p)
    xs = np.asarray(x, dtype=float)
    if np.any(xs <= x_plus):
        raise ParameterError(f"delta_v requires x > x_plus = {x_plus}")

    alpha, lam, gamma_n = p.alpha, post.phi, pre.phi
    closed = (
        p.g / alpha
        - _exp_clamped(lam * (xs + p.b - post.xi)) / (lam * alpha)
        + _exp_clamped(gamma_n * (xs - pre.xi)) / (gamma_n * alpha)
    )
    # Below xi0 the exit-only value is identically zero
    direct = np.asarray(exit_value(post, xs + p.b)) - p.k
    return _restore(np.where(xs > pre.xi, closed, direct), x)


def apply_generator(p: ModelParams, value: ArrayLike, d1: ArrayLike, d2: ArrayLike) -> ArrayLike:
    """A f = -alpha f + mu f' + sigma^2 f'' / 2 from pointwise values and derivatives."""
    return -p.alpha * np.asarray(value) + p.mu * np.asarray(d1) + 0.5 * p.sigma2 * np.asarray(d2)


def demand_to_params(p_price: float, c: float, demand_drift: float, demand_x0: float) -> Tuple[float, float]:
    """Map X_t = p D_t - c to (profit drift, initial profit rate)."""
    if not p_price > 0.0:
        raise ParameterError(f"price must be positive, got {p_price}")
    return p_price * demand_drift, p_price * demand_x0 - c


def exponent_derivatives(nu: float, alpha: float, sigma: float) -> ExponentDerivatives:
    """Partial derivatives of psi(nu) and phi(nu) in sigma^2, nu and alpha."""
    model = make_exit_model(nu, alpha, sigma)
    sigma2 = sigma * sigma
    root = math.sqrt(nu * nu + 2.0 * alpha * sigma2)
    return ExponentDerivatives(
        dpsi_dsigma2=(-nu * nu - alpha * sigma2 + nu * root) / (sigma2 * sigma2 * root),
        dphi_dsigma2=(nu * nu + alpha * sigma2 + nu * root) / (sigma2 * sigma2 * root),
        dpsi_dnu=-model.psi / root,
        dphi_dnu=model.phi / root,
        dpsi_dalpha=1.0 / root,
        dphi_dalpha=-1.0 / root,
    )
