"""Comparative statics, investment probability and the salvage / technology-switch shifts."""

from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Tuple

import numpy as np

from invest_exit.config import settings
from invest_exit.exceptions import ConvergenceFailure, InvestExitError, ParameterError
from invest_exit.logging_config import logger
from invest_exit.metrics import sweep_rows_total
from invest_exit.schemas import (
    ExitModel,
    ModelParams,
    NeverInvest,
    SalvageParams,
    SolverConfig,
    StaticsRow,
    ThresholdSolution,
)
from invest_exit.services.core_model import ArrayLike, exit_models, exit_value, exponent_derivatives
from invest_exit.services.threshold_solver import ThresholdSolver, value_v1

__all__ = [
    "SWEEP_VARIABLES",
    "exponent_derivatives",
    "locate_sigma_sign_change",
    "p_invest",
    "p_invest_sigma_sensitivity",
    "parameter_at",
    "salvage_exit",
    "tech_switch",
    "threshold_derivatives",
    "threshold_sweep",
]

SWEEP_VARIABLES = ("b", "g", "sigma2", "mu")
MU_ZERO = 1e-12
# Above this exponent p_I switches to the ratio form
EXPONENT_SWITCH = 500.0


def parameter_at(p: ModelParams, variable: str, value: float) -> ModelParams:
    """Copy of `p` with one sweep variable set; g is mapped back to b."""
    if variable == "b":
        return p.replace(b=value)
    if variable == "g":
        return p.replace(b=value - p.delta / p.alpha + p.k * p.alpha)
    if variable == "sigma2":
        if not value > 0.0:
            raise ParameterError(f"sigma2 must be positive, got {value}")
        return p.replace(sigma2=value)
    if variable == "mu":
        return p.replace(mu=value)
    raise ParameterError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")


def _solved(solver: ThresholdSolver, p: ModelParams, label: str) -> ThresholdSolution:
    try:
        sol = solver.solve(p)
    except ConvergenceFailure as e:
        raise ConvergenceFailure(f"{label}: {e.args[0]}", {**e.diagnostics, "perturbation": label}) from e
    if isinstance(sol, NeverInvest):
        raise ParameterError(f"{label}: investment is never optimal (g={p.g})")
    return sol


def _central(
    solver: ThresholdSolver,
    p: ModelParams,
    variable: str,
    base: float,
    step: float,
) -> Tuple[float, float]:
    """Central differences of (xi_E, xi_I) in one parameter."""
    up = _solved(solver, parameter_at(p, variable, base + step), f"{variable}+{step:g}")
    down = _solved(solver, parameter_at(p, variable, base - step), f"{variable}-{step:g}")
    return (up.xi_E - down.xi_E) / (2.0 * step), (up.xi_I - down.xi_I) / (2.0 * step)


def _derivative(
    solver: ThresholdSolver,
    p: ModelParams,
    variable: str,
    base: float,
    step: float,
    richardson: bool,
) -> Tuple[float, float]:
    coarse = _central(solver, p, variable, base, step)
    if not richardson:
        return coarse
    fine = _central(solver, p, variable, base, 0.5 * step)
    return tuple((4.0 * f - c) / 3.0 for f, c in zip(fine, coarse))


def _steps(p: ModelParams, relative: float) -> Tuple[float, float]:
    step_sigma2 = min(relative * max(1.0, p.sigma2), 0.5 * p.sigma2)
    step_mu = relative * max(1.0, abs(p.mu))
    return step_sigma2, step_mu


def threshold_derivatives(
    p: ModelParams,
    step: Optional[float] = None,
    cfg: Optional[SolverConfig] = None,
    richardson: Optional[bool] = None,
) -> StaticsRow:
    """Finite-difference d xi_E/d sigma^2, d xi_I/d sigma^2 and d xi_I/d mu at `p`.

    `step` is relative; the absolute steps are step*max(1, |sigma^2|) and
    step*max(1, |mu|). Failures at a perturbed point propagate with the
    perturbation named in the message and diagnostics.
    """
    solver = ThresholdSolver(cfg)
    relative = settings.fd_relative_step if step is None else step
    richardson = settings.richardson if richardson is None else richardson
    pre, post = exit_models(p)

    base = solver.solve(p)
    if isinstance(base, NeverInvest):
        return StaticsRow(
            g=p.g, b=p.b, alpha=p.alpha, mu=p.mu, sigma2=p.sigma2, delta=p.delta, k=p.k,
            xi_0=pre.xi, xi_1=post.xi, solver_status="never_invest",
        )

    step_sigma2, step_mu = _steps(p, relative)
    d_xiE_d_sigma2, d_xiI_d_sigma2 = _derivative(solver, p, "sigma2", p.sigma2, step_sigma2, richardson)
    _, d_xiI_d_mu = _derivative(solver, p, "mu", p.mu, step_mu, richardson)

    return StaticsRow(
        g=p.g, b=p.b, alpha=p.alpha, mu=p.mu, sigma2=p.sigma2, delta=p.delta, k=p.k,
        xi_0=pre.xi,
        xi_1=post.xi,
        xi_E=base.xi_E,
        xi_I=base.xi_I,
        d_xiE_d_sigma2=d_xiE_d_sigma2,
        d_xiI_d_sigma2=d_xiI_d_sigma2,
        d_xiI_d_mu=d_xiI_d_mu,
        step_sigma2=step_sigma2,
        step_mu=step_mu,
    )


def _status(error: InvestExitError) -> str:
    if isinstance(error, ConvergenceFailure):
        return "convergence_failure"
    if isinstance(error, ParameterError):
        return "parameter_error"
    return "error"


def _sweep_row(
    p: ModelParams,
    step: Optional[float],
    cfg: Optional[SolverConfig],
    richardson: Optional[bool],
) -> StaticsRow:
    try:
        row = threshold_derivatives(p, step=step, cfg=cfg, richardson=richardson)
    except InvestExitError as e:
        logger.warning("Sweep row failed", g=p.g, b=p.b, sigma2=p.sigma2, mu=p.mu, error=str(e))
        pre, post = exit_models(p)
        row = StaticsRow(
            g=p.g, b=p.b, alpha=p.alpha, mu=p.mu, sigma2=p.sigma2, delta=p.delta, k=p.k,
            xi_0=pre.xi, xi_1=post.xi, solver_status=_status(e),
        )
    sweep_rows_total.labels(status=row.solver_status).inc()
    return row


def threshold_sweep(
    p: ModelParams,
    variable: str,
    values: Iterable[float],
    step: Optional[float] = None,
    cfg: Optional[SolverConfig] = None,
    richardson: Optional[bool] = None,
    workers: Optional[int] = None,
) -> List[StaticsRow]:
    """One StaticsRow per grid value, in grid order; per-row failures land in solver_status."""
    points = [parameter_at(p, variable, float(v)) for v in values]
    logger.info("Starting sweep", variable=variable, points=len(points))
    if not points:
        return []

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda q: _sweep_row(q, step, cfg, richardson), points))

    failed = sum(1 for r in rows if r.solver_status not in ("ok", "never_invest"))
    logger.info("Sweep finished", variable=variable, points=len(rows), failed=failed)
    return rows


def locate_sigma_sign_change(
    p: ModelParams,
    lo: float = 0.5,
    hi: float = 1.5,
    tol: float = 1e-3,
    cfg: Optional[SolverConfig] = None,
) -> float:
    """The g at which d xi_I / d sigma^2 changes sign, by bisection on g."""

    def positive(g: float) -> bool:
        return threshold_derivatives(parameter_at(p, "g", g), cfg=cfg).d_xiI_d_sigma2 > 0.0

    lo_positive, hi_positive = positive(lo), positive(hi)
    if lo_positive == hi_positive:
        raise ConvergenceFailure(
            "d xi_I / d sigma^2 does not change sign on the g interval",
            {"lo": lo, "hi": hi, "positive": lo_positive},
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if positive(mid) == lo_positive:
            lo = mid
        else:
            hi = mid
    crossing = 0.5 * (lo + hi)
    logger.debug("Located sigma sign change", g=crossing)
    return crossing


def p_invest(sol: ThresholdSolution, p: ModelParams, x: ArrayLike) -> ArrayLike:
    """Probability that X started at x reaches xi_I before xi_E."""
    xs = np.asarray(x, dtype=float)
    if np.any(xs < sol.xi_E) or np.any(xs > sol.xi_I):
        raise ParameterError(f"p_invest requires x in [{sol.xi_E}, {sol.xi_I}]")

    gap = sol.xi_I - sol.xi_E
    y = xs - sol.xi_E
    if abs(p.mu) < MU_ZERO:
        prob = y / gap
    else:
        kappa = -2.0 * p.mu / p.sigma2
        if kappa * gap > EXPONENT_SWITCH:
            prob = np.exp(kappa * (y - gap)) * np.expm1(-kappa * y) / np.expm1(-kappa * gap)
        else:
            prob = np.expm1(kappa * y) / np.expm1(kappa * gap)
    prob = np.clip(prob, 0.0, 1.0)
    return float(prob) if np.ndim(x) == 0 else prob


def p_invest_sigma_sensitivity(
    p: ModelParams,
    x: Optional[float] = None,
    step: Optional[float] = None,
    cfg: Optional[SolverConfig] = None,
) -> float:
    """Central difference of p_I(x) in sigma^2 with thresholds re-solved.

    x defaults to the midpoint of the base continuation region.
    """
    solver = ThresholdSolver(cfg)
    base = _solved(solver, p, "base")
    x = 0.5 * (base.xi_E + base.xi_I) if x is None else x
    step_sigma2, _ = _steps(p, settings.fd_relative_step if step is None else step)

    up_params = parameter_at(p, "sigma2", p.sigma2 + step_sigma2)
    down_params = parameter_at(p, "sigma2", p.sigma2 - step_sigma2)
    up = _solved(solver, up_params, f"sigma2+{step_sigma2:g}")
    down = _solved(solver, down_params, f"sigma2-{step_sigma2:g}")
    return (p_invest(up, up_params, x) - p_invest(down, down_params, x)) / (2.0 * step_sigma2)


def salvage_exit(model: ExitModel, s: SalvageParams, x: ArrayLike) -> Tuple[ArrayLike, float]:
    """Exit problem paying s on exit: value s + V(x - alpha s), threshold xi + alpha s."""
    shift = model.alpha * s.s
    xs = np.asarray(x, dtype=float)
    value = s.s + np.asarray(exit_value(model, xs - shift))
    return (float(value) if np.ndim(x) == 0 else value), model.xi + shift


def tech_switch(
    sol: ThresholdSolution,
    p: ModelParams,
    s: SalvageParams,
    x: ArrayLike,
) -> Tuple[ArrayLike, float, float]:
    """Invest-or-exit with exit value s: (V1(x - alpha s) + s, xi_I + alpha s, xi_E + alpha s)."""
    shift = p.alpha * s.s
    xs = np.asarray(x, dtype=float)
    value = s.s + np.asarray(value_v1(sol, p, xs - shift))
    return (float(value) if np.ndim(x) == 0 else value), sol.xi_I + shift, sol.xi_E + shift
