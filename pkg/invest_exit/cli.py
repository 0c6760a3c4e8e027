"""Command-line interface for the invest-or-exit solver.

Usage:
    python run.py solve --b 1
    python run.py verify --g 0.6
    python run.py sweep --sweep g:0.05:2.0:40 --out fig.csv --gnuplot fig.gp
    python run.py simulate --paths 200000 --out mc.csv
    python run.py theta
    python run.py asymptotics --g 0.001
    python run.py statics --nu -1

Results go to stdout, logs to stderr. Exit status: 0 success, 2 usage or
domain error, 3 convergence failure, 4 verification failure.
"""

import math
import sys
from functools import wraps
from typing import List, Optional, Tuple

import click
import numpy as np
from pydantic import ValidationError

from invest_exit import __version__
from invest_exit.config import settings
from invest_exit.exceptions import InvestExitError, ParameterError, VerificationFailure
from invest_exit.logging_config import logger, setup_logging
from invest_exit.metrics import write_metrics
from invest_exit.schemas import ModelParams, NeverInvest, PolicySpec, SalvageParams, SolverConfig
from invest_exit.services import analysis, asymptotics, csv_io, mc_sim, threshold_solver
from invest_exit.services.core_model import demand_to_params, exit_models, exit_value, investment_terms

__all__ = [
    "cli",
]


def handle_errors(func):
    """Map InvestExitError to its exit status."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except InvestExitError as e:
            logger.error("Command failed", command=func.__name__, error=str(e))
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def model_options(func):
    """Shared --alpha/--mu/--sigma2/--delta/--b/--g/--k flags."""
    options = [
        click.option("--alpha", type=float, default=settings.alpha, show_default=True, help="Discount rate"),
        click.option("--mu", type=float, default=settings.mu, show_default=True, help="Pre-investment drift"),
        click.option("--sigma2", type=float, default=settings.sigma2, show_default=True, help="Variance rate"),
        click.option("--delta", type=float, default=settings.delta, show_default=True, help="Drift boost"),
        click.option("--b", "boost", type=float, default=settings.b, show_default=True, help="Profit-rate boost"),
        click.option("--g", "gain", type=float, default=None, help="Net gain rate; overrides --b"),
        click.option("--k", type=float, default=settings.k, show_default=True, help="Investment cost"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def demand_options(func):
    """--price/--cost/--demand-drift/--demand0 mapping demand to profit."""
    options = [
        click.option("--price", type=float, default=None, help="Unit price; enables the demand flags"),
        click.option("--cost", type=float, default=0.0, show_default=True, help="Cost rate"),
        click.option("--demand-drift", type=float, default=0.0, show_default=True, help="Demand drift"),
        click.option("--demand0", type=float, default=0.0, show_default=True, help="Initial demand"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_params(
    alpha: float,
    mu: float,
    sigma2: float,
    delta: float,
    boost: float,
    gain: Optional[float],
    k: float,
) -> ModelParams:
    if not sigma2 > 0.0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    try:
        p = ModelParams(alpha=alpha, mu=mu, sigma2=sigma2, delta=delta, b=boost, k=k)
        if gain is not None:
            p = p.with_g(gain)
    except ValidationError as e:
        raise ParameterError(str(e)) from e
    return p


def apply_demand(p: ModelParams, price, cost, demand_drift, demand0, x0: Optional[float]) -> Tuple[ModelParams, Optional[float]]:
    if price is None:
        return p, x0
    mu, demand_x0 = demand_to_params(price, cost, demand_drift, demand0)
    logger.info("Using demand parameters", price=price, cost=cost, mu=mu, x0=demand_x0)
    return p.replace(mu=mu), demand_x0


def solver_config(root_method: Optional[str]) -> SolverConfig:
    config = SolverConfig.from_settings(settings)
    if root_method is not None:
        config = config.model_copy(update={"root_method": root_method})
    return config


def format_float(value: float) -> str:
    return repr(float(value))


def echo_closed_forms(p: ModelParams) -> None:
    terms = investment_terms(p)
    click.echo(f"alpha={p.alpha} mu={p.mu} sigma2={format_float(p.sigma2)} delta={p.delta} b={format_float(p.b)} k={p.k}")
    click.echo(f"g        = {format_float(terms.g)}")
    click.echo(f"gamma_p  = {format_float(terms.gamma_p)}")
    click.echo(f"gamma_n  = {format_float(terms.gamma_n)}")
    click.echo(f"lambda   = {format_float(terms.lam)}")
    click.echo(f"xi0      = {format_float(terms.xi0)}")
    click.echo(f"xi1      = {format_float(terms.xi1)}")


def echo_report(report) -> None:
    for name, ok in report.checks.items():
        click.echo(f"  {name:<18} {'PASS' if ok else 'FAIL'}")
    click.echo(f"  residuals          {', '.join(format_float(r) for r in report.residuals)}")
    click.echo(f"  min V1 - h         {format_float(report.min_value_gap)}")
    click.echo(f"  curvature gaps     {format_float(report.curvature_gap_E)}, {format_float(report.curvature_gap_I)}")
    click.echo(f"  max A V1 + x       {format_float(report.max_generator_excess)}")
    click.echo(f"verification: {'PASS' if report.passed else 'FAIL'}")


@click.group()
@click.version_option(version=__version__, prog_name=settings.app_name)
@click.option("--log-level", default=None, help="Log level (default from settings)")
@click.option("--metrics-out", type=click.Path(dir_okay=False), default=None, help="Write run metrics here")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], metrics_out: Optional[str]):
    """Invest-or-exit thresholds for a Brownian profit stream."""
    if log_level is not None:
        setup_logging(log_level)
    if metrics_out is not None:
        ctx.call_on_close(lambda: write_metrics(metrics_out))


@cli.command()
@model_options
@demand_options
@click.option("--s", "salvage", type=float, default=0.0, show_default=True, help="Exit (salvage) value")
@click.option("--root-method", type=click.Choice(["brentq", "bisect"]), default=None)
@handle_errors
def solve(alpha, mu, sigma2, delta, boost, gain, k, price, cost, demand_drift, demand0, salvage, root_method):
    """
    Solve for the exit and investment thresholds and verify them.

    Examples:

        python run.py solve --b 1

        python run.py solve --g 0.6 --s 0.1
    """
    p = build_params(alpha, mu, sigma2, delta, boost, gain, k)
    p, x0 = apply_demand(p, price, cost, demand_drift, demand0, None)
    echo_closed_forms(p)
    if x0 is not None:
        click.echo(f"x0       = {format_float(x0)}")

    sol = threshold_solver.solve_thresholds(p, solver_config(root_method))
    if isinstance(sol, NeverInvest):
        click.echo(f"never-invest; exit threshold xi0 = {format_float(sol.xi0)}")
        click.echo(sol.model_dump_json())
        return

    click.echo(f"xi_E     = {format_float(sol.xi_E)}")
    click.echo(f"xi_I     = {format_float(sol.xi_I)}")
    click.echo(f"x_plus   = {format_float(sol.x_plus)}")
    click.echo(f"a1       = {format_float(sol.a1)}")
    click.echo(f"a2       = {format_float(sol.a2)}")
    if salvage:
        _, xi_I_s, xi_E_s = analysis.tech_switch(sol, p, SalvageParams(s=salvage), sol.xi_I)
        click.echo(f"with s={salvage}: xi_E = {format_float(xi_E_s)}, xi_I = {format_float(xi_I_s)}")

    report = threshold_solver.verify(sol, p)
    echo_report(report)
    click.echo(sol.model_dump_json())
    if not report.passed:
        raise VerificationFailure(f"verification failed: {', '.join(report.failures())}")


@cli.command()
@model_options
@click.option("--xi-e", "xi_E", type=float, default=None, help="Candidate exit threshold")
@click.option("--xi-i", "xi_I", type=float, default=None, help="Candidate investment threshold")
@click.option("--fit", type=click.Choice(["slopes", "values"]), default="slopes", show_default=True)
@click.option("--grid-points", type=int, default=None, help="Verification grid size")
@handle_errors
def verify(alpha, mu, sigma2, delta, boost, gain, k, xi_E, xi_I, fit, grid_points):
    """
    Check the optimality conditions of the solved (or a given) policy.
    """
    p = build_params(alpha, mu, sigma2, delta, boost, gain, k)
    config = SolverConfig.from_settings(settings)
    if grid_points is not None:
        config = config.model_copy(update={"verify_grid_points": grid_points})
    solver = threshold_solver.ThresholdSolver(config)

    if (xi_E is None) != (xi_I is None):
        raise ParameterError("--xi-e and --xi-i must be given together")
    if xi_E is None:
        sol = solver.solve(p)
        if isinstance(sol, NeverInvest):
            click.echo(f"never-invest; exit threshold xi0 = {format_float(sol.xi0)}")
            return
    else:
        sol = threshold_solver.candidate_solution(p, xi_E, xi_I, fit=fit)

    click.echo(f"xi_E = {format_float(sol.xi_E)}, xi_I = {format_float(sol.xi_I)}")
    report = solver.verify(sol, p)
    echo_report(report)
    if not report.passed:
        raise VerificationFailure(f"verification failed: {', '.join(report.failures())}")


def parse_grid(text: str) -> Tuple[str, List[float]]:
    """'var:lo:hi:steps' -> (var, strictly increasing grid)."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ParameterError(f"--sweep expects var:lo:hi:steps, got {text!r}")
    variable = parts[0]
    if variable not in analysis.SWEEP_VARIABLES:
        raise ParameterError(f"sweep variable must be one of {analysis.SWEEP_VARIABLES}, got {variable!r}")
    try:
        lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError as e:
        raise ParameterError(f"bad --sweep value {text!r}: {e}") from e
    if steps < 0:
        raise ParameterError("sweep steps must be nonnegative")
    if steps >= 2 and not hi > lo:
        raise ParameterError("sweep grid must be strictly increasing")
    if steps == 1:
        return variable, [lo]
    return variable, [float(v) for v in np.linspace(lo, hi, steps)]


@cli.command()
@model_options
@click.option("--sweep", "grid", required=True, help="var:lo:hi:steps with var in b, g, sigma2, mu")
@click.option("--step", type=float, default=None, help="Relative finite-difference step")
@click.option("--richardson/--no-richardson", default=None, help="Two-step Richardson extrapolation")
@click.option("--workers", type=int, default=None, help="Thread pool size")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path (default stdout)")
@click.option("--gnuplot", type=click.Path(dir_okay=False), default=None, help="Write a gnuplot script here")
@handle_errors
def sweep(alpha, mu, sigma2, delta, boost, gain, k, grid, step, richardson, workers, out, gnuplot):
    """
    Thresholds and their finite-difference derivatives over a parameter grid.

    Examples:

        python run.py sweep --sweep g:0.05:2.0:40 --out fig.csv
    """
    p = build_params(alpha, mu, sigma2, delta, boost, gain, k)
    variable, values = parse_grid(grid)
    rows = analysis.threshold_sweep(p, variable, values, step=step, richardson=richardson, workers=workers)
    frame = csv_io.statics_frame(rows)
    if out is None:
        csv_io.write_csv(frame, sys.stdout)
    else:
        csv_io.write_csv(frame, out)
        click.echo(f"Wrote {len(rows)} rows to {out}", err=True)
    if gnuplot is not None:
        with open(gnuplot, "w") as handle:
            handle.write(csv_io.gnuplot_script(out or "sweep.csv", variable))


def default_starts(p: ModelParams, sol) -> List[float]:
    if isinstance(sol, NeverInvest):
        return [0.0]
    return [sol.xi_E + 0.1, sol.x_plus, sol.xi_I - 0.1]


@cli.command()
@model_options
@demand_options
@click.option("--x0", "starts", type=float, multiple=True, help="Start rate (repeatable)")
@click.option("--paths", type=int, default=None, help="Number of paths")
@click.option("--dt", type=float, default=None, help="Time step")
@click.option("--horizon", type=float, default=None, help="Truncation time")
@click.option("--seed", type=int, default=None, help="64-bit seed")
@click.option("--workers", type=int, default=None, help="Thread pool size")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path (default stdout)")
@handle_errors
def simulate(alpha, mu, sigma2, delta, boost, gain, k, price, cost, demand_drift, demand0,
             starts, paths, dt, horizon, seed, workers, out):
    """
    Monte Carlo returns of the analytic policy against the closed forms.
    """
    p = build_params(alpha, mu, sigma2, delta, boost, gain, k)
    p, demand_x0 = apply_demand(p, price, cost, demand_drift, demand0, None)
    sol = threshold_solver.solve_thresholds(p)
    if starts:
        starts = list(starts)
    elif demand_x0 is not None:
        starts = [demand_x0]
    else:
        starts = default_starts(p, sol)

    if isinstance(sol, NeverInvest):
        policy = PolicySpec.exit_only(sol.xi0)
    else:
        policy = PolicySpec.from_solution(sol)

    records = []
    for x0 in starts:
        cfg = mc_sim.default_path_config(p, x0, n_paths=paths, dt=dt, horizon=horizon, seed=seed, workers=workers)
        estimate = mc_sim.simulate_policy(p, policy, cfg)
        if isinstance(sol, NeverInvest):
            analytic = float(exit_value(exit_models(p)[0], x0))
            p_closed = 0.0
        else:
            analytic = float(threshold_solver.value_v1(sol, p, x0))
            if x0 <= sol.xi_E:
                p_closed = 0.0
            elif x0 >= sol.xi_I:
                p_closed = 1.0
            else:
                p_closed = analysis.p_invest(sol, p, x0)
        diff = estimate.mean - analytic
        if estimate.std_error > 0.0:
            z_score = diff / estimate.std_error
        else:
            z_score = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        records.append({
            "x0": x0,
            "analytic_value": analytic,
            "mc_mean": estimate.mean,
            "mc_se": estimate.std_error,
            "p_invest_closed": p_closed,
            "p_invest_mc": estimate.p_invest_hat,
            "z_score": z_score,
        })

    frame = csv_io.simulate_frame(records)
    if out is None:
        csv_io.write_csv(frame, sys.stdout)
    else:
        csv_io.write_csv(frame, out)
        click.echo(f"Wrote {len(records)} rows to {out}", err=True)


@cli.command()
@model_options
@click.option("--derivatives", is_flag=True, help="Also print d theta / d sigma^2 and d theta / d mu")
@handle_errors
def theta(alpha, mu, sigma2, delta, boost, gain, k, derivatives):
    """
    The large-b constants theta and z.
    """
    p = build_params(alpha, mu, sigma2, delta, boost, gain, k)
    value, z = asymptotics.theta_z(p)
    click.echo(f"theta = {format_float(value)}")
    click.echo(f"z     = {format_float(z)}")
    if derivatives:
        d_sigma2, d_mu = asymptotics.theta_derivatives(p)
        click.echo(f"d theta / d sigma2 = {format_float(d_sigma2)}")
        click.echo(f"d theta / d mu     = {format_float(d_mu)}")


@cli.command(name="asymptotics")
@model_options
@handle_errors
def asymptotics_cmd(alpha, mu, sigma2, delta, boost, gain, k):
    """
    Small-g and large-b expansions next to the solved gaps.
    """
    p = build_params(alpha, mu, sigma2, delta, boost, gain, k)
    if not p.g > 0.0:
        raise ParameterError(f"expansions require g > 0, got {p.g}")
    sol = threshold_solver.solve_thresholds(p)
    click.echo(f"g = {format_float(p.g)}")
    click.echo(f"solver:  delta_E0 = {format_float(sol.delta_E0)}, delta_IE = {format_float(sol.delta_IE)}")
    for report in (asymptotics.small_g_expansion(p), asymptotics.large_b_expansion(p)):
        click.echo(
            f"{report.regime:<8} delta_E0 = {format_float(report.delta_E0_approx)}, "
            f"delta_IE = {format_float(report.delta_IE_approx)}, in_regime = {report.in_regime}"
        )


@cli.command()
@click.option("--nu", type=float, default=settings.mu, show_default=True, help="Drift")
@click.option("--alpha", type=float, default=settings.alpha, show_default=True, help="Discount rate")
@click.option("--sigma2", type=float, default=settings.sigma2, show_default=True, help="Variance rate")
@handle_errors
def statics(nu, alpha, sigma2):
    """
    Closed-form partial derivatives of psi and phi.
    """
    if not sigma2 > 0.0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    table = analysis.exponent_derivatives(nu, alpha, math.sqrt(sigma2))
    for name, value in table.model_dump().items():
        click.echo(f"{name:<14} {format_float(value)}")


if __name__ == "__main__":
    cli()
