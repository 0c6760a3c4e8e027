"""Monte Carlo evaluation of threshold policies.

Paths are grouped into streams of `block_size` lanes. Stream j draws its
Gaussian increments from SeedSequence([seed, j]) in fixed (chunk, lanes)
arrays, so lane l of stream j sees the same increment at step n under
every policy. Results are independent of thread scheduling, and grid cells
share common random numbers.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np

from invest_exit.config import settings
from invest_exit.exceptions import ParameterError
from invest_exit.logging_config import logger
from invest_exit.metrics import mc_paths_simulated_total, track_simulation
from invest_exit.schemas import GridCell, GridSearchResult, ModelParams, PathConfig, PolicySpec, SimEstimate

CHUNK_STEPS = 256
MIN_HORIZON_RATES = 10.0


def default_path_config(
    p: ModelParams,
    x0: float,
    n_paths: Optional[int] = None,
    dt: Optional[float] = None,
    horizon: Optional[float] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> PathConfig:
    """PathConfig with unset fields taken from settings (dt = 1e-4/alpha, T = 40/alpha)."""
    default_dt = settings.mc_dt if settings.mc_dt is not None else 1e-4 / p.alpha
    default_horizon = settings.mc_horizon if settings.mc_horizon is not None else 40.0 / p.alpha
    return PathConfig(
        x0=x0,
        dt=default_dt if dt is None else dt,
        horizon=default_horizon if horizon is None else horizon,
        n_paths=settings.mc_paths if n_paths is None else n_paths,
        seed=settings.mc_seed if seed is None else seed,
        block_size=settings.mc_block_size,
        workers=settings.mc_workers if workers is None else workers,
    )


def tail_bound(p: ModelParams, cfg: PathConfig) -> float:
    """Bound on the discounted profit beyond the truncation time."""
    T = cfg.horizon
    spread = abs(cfg.x0) + abs(p.mu) * T + p.sigma * math.sqrt(2.0 * T / math.pi)
    return math.exp(-p.alpha * T) * spread / p.alpha


def _check(p: ModelParams, cfg: PathConfig) -> None:
    if cfg.horizon < MIN_HORIZON_RATES / p.alpha:
        raise ParameterError(f"horizon must be at least {MIN_HORIZON_RATES}/alpha, got {cfg.horizon}")


def _stream_sizes(cfg: PathConfig) -> List[int]:
    full, rest = divmod(cfg.n_paths, cfg.block_size)
    return [cfg.block_size] * full + ([rest] if rest else [])


def _simulate_stream(
    p: ModelParams,
    pol: PolicySpec,
    cfg: PathConfig,
    stream: int,
    lanes: int,
    stop_on_invest: bool,
) -> Tuple[np.ndarray, np.ndarray]:
    """Discounted payoffs and investment flags for one stream."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, stream]))
    exit_post = pol.exit_post if pol.exit_post is not None else pol.exit_pre

    x = np.full(lanes, cfg.x0, dtype=float)
    payoff = np.zeros(lanes)
    invested = np.zeros(lanes, dtype=bool)

    if cfg.x0 <= pol.exit_pre:
        return payoff, invested
    if cfg.x0 >= pol.invest:
        x += p.b
        payoff -= p.k
        invested[:] = True
        if stop_on_invest:
            return payoff, invested

    n_steps = int(math.ceil(cfg.horizon / cfg.dt))
    dt, scale = cfg.dt, p.sigma * math.sqrt(cfg.dt)
    alive = np.arange(lanes)
    step = 0

    while alive.size and step < n_steps:
        noise = rng.standard_normal((min(CHUNK_STEPS, n_steps - step), lanes))
        for row in noise:
            disc = math.exp(-p.alpha * dt * step)
            disc_next = math.exp(-p.alpha * dt * (step + 1))
            x_now = x[alive]
            inv = invested[alive]

            x_next = x_now + (p.mu + p.delta * inv) * dt + scale * row[alive]
            payoff[alive] += 0.5 * dt * (disc * x_now + disc_next * x_next)
            x[alive] = x_next

            exited = x_next <= np.where(inv, exit_post, pol.exit_pre)
            invest_now = ~inv & ~exited & (x_next >= pol.invest)
            if invest_now.any():
                hit = alive[invest_now]
                x[hit] += p.b
                payoff[hit] -= p.k * disc_next
                invested[hit] = True

            keep = ~exited
            if stop_on_invest:
                keep &= ~invest_now
            alive = alive[keep]
            step += 1
            if not alive.size or step >= n_steps:
                break

    logger.debug("Stream finished", stream=stream, lanes=lanes, steps=step, still_alive=int(alive.size))
    return payoff, invested


def _simulate_paths(
    p: ModelParams,
    pol: PolicySpec,
    cfg: PathConfig,
    stop_on_invest: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-path payoffs and investment flags, in path order."""
    _check(p, cfg)
    sizes = _stream_sizes(cfg)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(
            lambda job: _simulate_stream(p, pol, cfg, job[0], job[1], stop_on_invest),
            enumerate(sizes),
        ))
    payoffs = np.concatenate([r[0] for r in results])
    invested = np.concatenate([r[1] for r in results])
    return payoffs, invested


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    variance = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(variance / n)


def _frequency_se(flags: np.ndarray) -> Tuple[float, float]:
    n = flags.size
    freq = float(np.count_nonzero(flags)) / n
    return freq, math.sqrt(freq * (1.0 - freq) / n)


@track_simulation
def simulate_policy(p: ModelParams, pol: PolicySpec, cfg: PathConfig) -> SimEstimate:
    """Expected discounted return of `pol` from cfg.x0, net of the discounted investment cost."""
    logger.info(
        "Simulating policy",
        exit_pre=pol.exit_pre, invest=pol.invest, exit_post=pol.exit_post,
        x0=cfg.x0, n_paths=cfg.n_paths, dt=cfg.dt, horizon=cfg.horizon,
    )
    payoffs, invested = _simulate_paths(p, pol, cfg)
    mean, se = _mean_se(payoffs)
    p_hat, p_se = _frequency_se(invested)
    return SimEstimate(
        mean=mean,
        std_error=se,
        p_invest_hat=p_hat,
        p_invest_se=p_se,
        tail_bound=tail_bound(p, cfg),
        n_paths=cfg.n_paths,
    )


def estimate_p_invest(p: ModelParams, pol: PolicySpec, cfg: PathConfig) -> Tuple[float, float]:
    """(frequency, standard error) of reaching `invest` before `exit_pre` from cfg.x0."""
    if not pol.exit_pre < cfg.x0 < pol.invest:
        raise ParameterError(f"x0={cfg.x0} must lie strictly between {pol.exit_pre} and {pol.invest}")
    _, invested = _simulate_paths(p, pol, cfg, stop_on_invest=True)
    mc_paths_simulated_total.inc(cfg.n_paths)
    return _frequency_se(invested)


def _axis(center: float, radius: float, steps: int) -> List[float]:
    if radius == 0.0 or steps <= 1:
        return [center]
    # offsets keep the middle point of an odd grid exactly on the center
    return [center + radius * float(u) for u in np.linspace(-1.0, 1.0, steps)]


def _candidates(center: PolicySpec, radius: float, steps: int) -> List[PolicySpec]:
    if not math.isfinite(center.invest):
        return [PolicySpec.exit_only(e) for e in _axis(center.exit_pre, radius, steps)]

    policies = []
    for exit_pre, invest, exit_post in itertools.product(
        _axis(center.exit_pre, radius, steps),
        _axis(center.invest, radius, steps),
        _axis(center.exit_post, radius, steps),
    ):
        if exit_pre < invest:
            policies.append(PolicySpec(exit_pre=exit_pre, invest=invest, exit_post=exit_post))
    return policies


def grid_search(
    p: ModelParams,
    center: PolicySpec,
    radius: float,
    steps: int,
    cfg: PathConfig,
) -> GridSearchResult:
    """Evaluate a steps^3 grid of policies around `center` with common random numbers."""
    if radius < 0.0:
        raise ParameterError(f"radius must be nonnegative, got {radius}")

    center_payoffs, _ = _simulate_paths(p, center, cfg)
    center_mean, center_se = _mean_se(center_payoffs)
    center_cell = GridCell(policy=center, mean=center_mean, std_error=center_se, diff_vs_center=0.0, diff_std_error=0.0)

    cells = []
    for policy in _candidates(center, radius, steps):
        if policy == center:
            cells.append(center_cell)
            continue
        payoffs, _ = _simulate_paths(p, policy, cfg)
        mean, se = _mean_se(payoffs)
        diff, diff_se = _mean_se(payoffs - center_payoffs)
        cells.append(GridCell(policy=policy, mean=mean, std_error=se, diff_vs_center=diff, diff_std_error=diff_se))
    if not any(cell.policy == center for cell in cells):
        cells.append(center_cell)

    mc_paths_simulated_total.inc(cfg.n_paths * len(cells))
    best = max(cells, key=lambda cell: cell.diff_vs_center)
    logger.info(
        "Grid search finished",
        cells=len(cells), best_exit_pre=best.policy.exit_pre, best_invest=best.policy.invest,
        best_excess=best.diff_vs_center, best_excess_se=best.diff_std_error,
    )
    return GridSearchResult(center=center_cell, best=best, cells=cells)
