"""Free-boundary solver for the pre-investment exit/invest thresholds.

For fixed Delta_IE = xi_I - xi_E the value-matching equation at xi_E has a
unique root Delta_E0 = xi_E - xi0 (its left side increases and its right
side decreases in Delta_E0). The outer search runs over Delta_IE on the
difference between the two eliminated boundary equations. The elimination
assumes the firm keeps operating right after investing, xi_I + b > xi1, so
the search starts past the last gap where that fails; the outer residual is
positive there and negative for large Delta_IE.

Roots whose residuals miss the tolerance are refined on the direct
two-equation system, which keeps its precision on short continuation
intervals.

Coefficients are stored scaled, c1 = a1 exp(gamma_p xi_I) and
c2 = a2 exp(gamma_n xi_E), so V1 is evaluated with non-positive exponents
on the continuation region.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from invest_exit.config import settings
from invest_exit.exceptions import ConvergenceFailure, ParameterError
from invest_exit.logging_config import logger
from invest_exit.metrics import track_solve
from invest_exit.schemas import (
    ModelParams,
    NeverInvest,
    SolverConfig,
    ThresholdSolution,
    VerificationReport,
)
from invest_exit.services.asymptotics import initial_gap_guess
from invest_exit.services.core_model import (
    ArrayLike,
    apply_generator,
    break_even_rate,
    exit_models,
    find_root,
    reward_h,
    reward_h_derivatives,
)

EXP_CAP = 700.0
DEGENERATE_GAP = 1e-12


def _exp(arg: float) -> float:
    return math.exp(min(arg, EXP_CAP))


@dataclass(frozen=True)
class _Constants:
    alpha: float
    mu: float
    b: float
    g: float
    gamma_p: float
    gamma_n: float
    lam: float
    xi0: float
    xi1: float

    @classmethod
    def of(cls, p: ModelParams) -> "_Constants":
        pre, post = exit_models(p)
        return cls(
            alpha=p.alpha, mu=p.mu, b=p.b, g=p.g,
            gamma_p=pre.psi, gamma_n=pre.phi, lam=post.phi,
            xi0=pre.xi, xi1=post.xi,
        )


def _slope_fit(c: _Constants, xi_E: float, xi_I: float, slope_E: float, slope_I: float) -> Tuple[float, float]:
    """Scaled coefficients (c1, c2) matching V1' at both boundaries."""
    gap = xi_I - xi_E
    denom = -math.expm1(-(c.gamma_p - c.gamma_n) * gap)
    q = math.exp(c.gamma_n * gap)
    u = (slope_I - 1.0 / c.alpha - (slope_E - 1.0 / c.alpha) * q) / denom
    v = slope_E - 1.0 / c.alpha - u * math.exp(-c.gamma_p * gap)
    return u / c.gamma_p, v / c.gamma_n


def _value_fit(c: _Constants, xi_E: float, xi_I: float, value_E: float, value_I: float) -> Tuple[float, float]:
    """Scaled coefficients (c1, c2) matching V1 at both boundaries."""
    gap = xi_I - xi_E
    base = c.mu / c.alpha**2
    matrix = np.array([
        [math.exp(-c.gamma_p * gap), 1.0],
        [1.0, math.exp(c.gamma_n * gap)],
    ])
    rhs = np.array([value_E - xi_E / c.alpha - base, value_I - xi_I / c.alpha - base])
    c1, c2 = np.linalg.solve(matrix, rhs)
    return float(c1), float(c2)


def _inside(c: _Constants, xi_E: float, xi_I: float, c1: float, c2: float, x: np.ndarray):
    """V1, V1', V1'' of the continuation-region expression."""
    e_p = np.exp(np.minimum(c.gamma_p * (x - xi_I), EXP_CAP))
    e_n = np.exp(np.minimum(c.gamma_n * (x - xi_E), EXP_CAP))
    value = x / c.alpha + c.mu / c.alpha**2 + c1 * e_p + c2 * e_n
    d1 = 1.0 / c.alpha + c.gamma_p * c1 * e_p + c.gamma_n * c2 * e_n
    d2 = c.gamma_p**2 * c1 * e_p + c.gamma_n**2 * c2 * e_n
    return value, d1, d2


def boundary_residuals(
    p: ModelParams,
    xi_E: float,
    xi_I: float,
    c1: float,
    c2: float,
    salvage: float = 0.0,
) -> Tuple[float, float, float, float]:
    """Value matching and smooth pasting at xi_E and xi_I.

    With an exit value s the exit reward is s and the investment reward is
    h(x - alpha s) + s.
    """
    c = _Constants.of(p)
    shift = p.alpha * salvage
    values, slopes, _ = _inside(c, xi_E, xi_I, c1, c2, np.array([xi_E, xi_I]))
    h_I = reward_h(p, xi_I - shift) + salvage
    dh_I, _ = reward_h_derivatives(p, xi_I - shift)
    return (
        float(values[0] - salvage),
        float(slopes[0]),
        float(values[1] - h_I),
        float(slopes[1] - dh_I),
    )


def coefficients(p: ModelParams, xi_E: float, xi_I: float) -> Tuple[float, float]:
    """(a1, a2) from smooth pasting at xi_E and xi_I."""
    c = _Constants.of(p)
    c1, c2 = _scaled_coefficients(c, xi_E, xi_I)
    return _unscale(c, xi_E, xi_I, c1, c2)


def _scaled_coefficients(c: _Constants, xi_E: float, xi_I: float) -> Tuple[float, float]:
    if not xi_I - xi_E > DEGENERATE_GAP * max(1.0, abs(xi_E)):
        raise ParameterError(f"degenerate continuation interval ({xi_E}, {xi_I})")
    if not xi_I + c.b - c.xi1 > 0.0:
        raise ParameterError("investment threshold must satisfy xi_I + b > xi1")
    slope_I = -math.expm1(c.lam * (xi_I + c.b - c.xi1)) / c.alpha
    return _slope_fit(c, xi_E, xi_I, 0.0, slope_I)


def value_matched_coefficients(p: ModelParams, xi_E: float, xi_I: float) -> Tuple[float, float]:
    """Scaled (c1, c2) with V1(xi_E) = 0 and V1(xi_I) = h(xi_I), ignoring slopes."""
    return _value_fit(_Constants.of(p), xi_E, xi_I, 0.0, float(reward_h(p, xi_I)))


def _unscale(c: _Constants, xi_E: float, xi_I: float, c1: float, c2: float) -> Tuple[float, float]:
    def scale(coef: float, log_factor: float) -> float:
        if coef == 0.0:
            return 0.0
        log_abs = math.log(abs(coef)) + log_factor
        if log_abs > 709.0:
            return math.copysign(math.inf, coef)
        return math.copysign(math.exp(log_abs), coef)

    return scale(c1, -c.gamma_p * xi_I), scale(c2, -c.gamma_n * xi_E)


def candidate_solution(
    p: ModelParams,
    xi_E: float,
    xi_I: float,
    fit: str = "slopes",
    iterations: int = 0,
    extra_roots: int = 0,
    delta_E0: Optional[float] = None,
    delta_IE: Optional[float] = None,
) -> ThresholdSolution:
    """Build a ThresholdSolution for given thresholds without searching.

    fit="slopes" uses the smooth-pasting coefficients; fit="values" matches
    only V1 to h at both ends. `delta_E0` and `delta_IE` override the
    threshold differences when the caller has them to better than ulp(xi0).
    """
    c = _Constants.of(p)
    if fit == "slopes":
        c1, c2 = _scaled_coefficients(c, xi_E, xi_I)
    elif fit == "values":
        c1, c2 = value_matched_coefficients(p, xi_E, xi_I)
    else:
        raise ParameterError(f"unknown fit {fit!r}")
    a1, a2 = _unscale(c, xi_E, xi_I, c1, c2)
    return ThresholdSolution(
        xi_E=xi_E,
        xi_I=xi_I,
        xi0=c.xi0,
        xi1=c.xi1,
        a1=a1,
        a2=a2,
        c1=c1,
        c2=c2,
        x_plus=break_even_rate(p),
        g=p.g,
        residuals=boundary_residuals(p, xi_E, xi_I, c1, c2),
        delta_E0=xi_E - c.xi0 if delta_E0 is None else delta_E0,
        delta_IE=xi_I - xi_E if delta_IE is None else delta_IE,
        iterations=iterations,
        extra_roots=extra_roots,
    )


def value_v1(sol: ThresholdSolution, p: ModelParams, x: ArrayLike) -> ArrayLike:
    """Optimal return V1: closed form on (xi_E, xi_I), the reward h elsewhere."""
    c = _Constants.of(p)
    xs = np.asarray(x, dtype=float)
    value, _, _ = _inside(c, sol.xi_E, sol.xi_I, sol.c1, sol.c2, xs)
    inside = (xs > sol.xi_E) & (xs < sol.xi_I)
    result = np.where(inside, value, np.asarray(reward_h(p, xs)))
    return float(result) if np.ndim(x) == 0 else result


def value_v1_derivatives(sol: ThresholdSolution, p: ModelParams, x: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """V1' and V1'' (one-sided at the boundaries, from the continuation side)."""
    c = _Constants.of(p)
    xs = np.asarray(x, dtype=float)
    _, d1, d2 = _inside(c, sol.xi_E, sol.xi_I, sol.c1, sol.c2, xs)
    h1, h2 = reward_h_derivatives(p, xs)
    inside = (xs >= sol.xi_E) & (xs <= sol.xi_I)
    d1 = np.where(inside, d1, h1)
    d2 = np.where(inside, d2, h2)
    if np.ndim(x) == 0:
        return float(d1), float(d2)
    return d1, d2


class ThresholdSolver:
    """Solves the invest/exit free-boundary problem for a parameter set."""

    def __init__(self, config: Optional[SolverConfig] = None):
        """Initialize the solver with immutable tolerances."""
        self.config = config or SolverConfig.from_settings(settings)

    # Eliminated boundary equations

    def _rhs_exit(self, c: _Constants, gap: float, delta_E0: float) -> float:
        weight = 1.0 / c.lam - 1.0 / c.gamma_n
        e_lam = _exp(c.lam * (gap + delta_E0 + c.b + c.xi0 - c.xi1))
        return math.exp(-c.gamma_p * gap) * (-c.g + weight * e_lam)

    def _rhs_invest(self, c: _Constants, gap: float, delta_E0: float) -> float:
        e_lam = _exp(c.lam * (gap + delta_E0 + c.b + c.xi0 - c.xi1))
        growth = _exp(-c.gamma_n * gap)
        return (
            growth * (-c.g + (1.0 / c.lam - 1.0 / c.gamma_p) * e_lam)
            + (1.0 / c.gamma_p - 1.0 / c.gamma_n)
        )

    def _inner(self, c: _Constants, gap: float) -> float:
        """Unique Delta_E0 solving the exit-side equation for this gap."""
        lo = -c.g * math.exp(-c.gamma_p * gap)
        hi = self._rhs_exit(c, gap, lo)

        def residual(d: float) -> float:
            return d - self._rhs_exit(c, gap, d)

        if hi <= lo or residual(lo) == 0.0:
            return lo
        if residual(hi) == 0.0:
            return hi
        # Relative below unit scale; Delta_E0 can be many orders below ulp(xi0)
        scale = min(1.0, max(abs(lo), abs(hi)))
        root, _ = find_root(
            residual, lo, hi,
            xtol=max(self.config.inner_xtol * scale, 1e-300),
            method=self.config.root_method,
            maxiter=self.config.max_iter,
            what="delta_E0",
        )
        return root

    def _outer(self, c: _Constants, gap: float) -> float:
        delta_E0 = self._inner(c, gap)
        return self._rhs_invest(c, gap, delta_E0) - delta_E0

    def _operating_margin(self, c: _Constants, gap: float) -> float:
        """xi_I + b - xi1 along the inner root."""
        return gap + self._inner(c, gap) + c.b + c.xi0 - c.xi1

    def _lower_gap(self, c: _Constants) -> float:
        """Start of the outer search: past the last gap with xi_I + b <= xi1."""
        hi = max(1.0, c.xi1 - c.xi0 - c.b)
        for _ in range(self.config.bracket_max_expansions):
            if self._operating_margin(c, hi) > 0.0:
                break
            hi *= 2.0
        else:
            raise ConvergenceFailure("delta_IE: no gap with xi_I + b > xi1", {"hi": hi, "b": c.b})

        # The margin can dip below zero after a positive start when b < 0
        grid = np.linspace(0.0, hi, self.config.root_scan_points)
        margins = [self._operating_margin(c, float(x)) for x in grid]
        closed = [i for i, m in enumerate(margins) if m <= 0.0]
        if not closed:
            return 0.0
        last = closed[-1]
        lo, _ = find_root(
            lambda gap: self._operating_margin(c, gap), float(grid[last]), float(grid[last + 1]),
            xtol=self.config.outer_xtol,
            method=self.config.root_method,
            maxiter=self.config.max_iter,
            what="operating margin",
        )
        logger.debug("Outer search starts past the closing region", lower_gap=lo, b=c.b)
        return lo

    def _bracket(self, c: _Constants, p: ModelParams) -> Tuple[float, float]:
        lo = self._lower_gap(c)
        f_lo = self._outer(c, lo)
        if not f_lo > 0.0:
            raise ConvergenceFailure(
                "delta_IE: outer residual not positive at the lower gap", {"lo": lo, "f_lo": f_lo, "g": c.g}
            )

        guess, regime = initial_gap_guess(p)
        width = 2.0 * guess if regime != "default" else guess
        hi = lo + width
        for expansion in range(self.config.bracket_max_expansions):
            if self._outer(c, hi) < 0.0:
                return lo, hi
            logger.debug("Expanding outer bracket", hi=hi, expansion=expansion)
            width *= 2.0
            hi = lo + width
        raise ConvergenceFailure(
            "delta_IE: outer bracket expansion exhausted",
            {"lo": lo, "hi": hi, "expansions": self.config.bracket_max_expansions},
        )

    def _roots(self, c: _Constants, lo: float, hi: float) -> Tuple[List[float], int]:
        """All sign changes of the outer residual seen on a scan of [lo, hi], refined."""
        grid = np.linspace(lo, hi, self.config.root_scan_points)
        values = [self._outer(c, float(x)) for x in grid]
        roots, calls = [], 0
        for left, right, f_left, f_right in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
            if f_left == 0.0:
                roots.append(float(left))
                continue
            if f_left * f_right < 0.0:
                root, n = find_root(
                    lambda gap: self._outer(c, gap), float(left), float(right),
                    xtol=self.config.outer_xtol,
                    method=self.config.root_method,
                    maxiter=self.config.max_iter,
                    what="delta_IE",
                )
                roots.append(root)
                calls += n
        if not roots:
            root, calls = find_root(
                lambda gap: self._outer(c, gap), lo, hi,
                xtol=self.config.outer_xtol,
                method=self.config.root_method,
                maxiter=self.config.max_iter,
                what="delta_IE",
            )
            roots.append(root)
        return roots, calls

    @track_solve
    def solve(self, p: ModelParams) -> Union[ThresholdSolution, NeverInvest]:
        """Optimal (xi_E, xi_I), or NeverInvest when g <= 0."""
        c = _Constants.of(p)
        if p.g <= 0.0:
            logger.info("Investment never optimal", g=p.g, xi0=c.xi0)
            return NeverInvest(xi0=c.xi0, g=p.g)

        logger.debug("Solving thresholds", alpha=p.alpha, mu=p.mu, sigma2=p.sigma2, delta=p.delta, b=p.b, k=p.k, g=p.g)

        lo, hi = self._bracket(c, p)
        roots, calls = self._roots(c, lo, hi)
        extra = len(roots) - 1
        if extra:
            logger.warning("Multiple roots of the boundary system", roots=roots, g=p.g)

        first: Optional[ThresholdSolution] = None
        for gap in roots:
            delta_E0 = self._inner(c, gap)
            xi_E = c.xi0 + delta_E0
            try:
                candidate = candidate_solution(
                    p, xi_E, xi_E + gap,
                    iterations=calls, extra_roots=extra, delta_E0=delta_E0, delta_IE=gap,
                )
            except ParameterError as e:
                logger.warning("Root rejected", delta_IE=gap, error=str(e))
                continue
            worst = max(abs(r) for r in candidate.residuals)
            if worst > self.config.residual_tol:
                candidate = self._polish(p, candidate)
                if candidate is None:
                    logger.warning("Root rejected on residuals", delta_IE=gap, max_residual=worst)
                    continue
            if first is None:
                first = candidate
            if extra == 0 or self.verify(candidate, p).passed:
                logger.debug("Thresholds solved", xi_E=candidate.xi_E, xi_I=candidate.xi_I, calls=calls)
                return candidate

        if first is not None:
            logger.warning("No root passed verification; returning first root", xi_E=first.xi_E, xi_I=first.xi_I)
            return first
        raise ConvergenceFailure(
            "boundary residuals above tolerance",
            {"roots": roots, "residual_tol": self.config.residual_tol, "g": p.g},
        )

    def _polish(self, p: ModelParams, rough: ThresholdSolution) -> Optional[ThresholdSolution]:
        """Refine a nested root on the direct system; None when that fails too."""
        try:
            xi_E, xi_I, _, _ = self.solve_boundary_system(p, guess=(rough.xi_E, rough.xi_I))
            polished = candidate_solution(
                p, xi_E, xi_I, iterations=rough.iterations, extra_roots=rough.extra_roots,
            )
        except (ConvergenceFailure, ParameterError, ArithmeticError) as e:
            logger.debug("Polish failed", delta_IE=rough.delta_IE, error=str(e))
            return None
        if max(abs(r) for r in polished.residuals) > self.config.residual_tol:
            return None
        logger.debug("Root polished", before=rough.residuals, after=polished.residuals)
        return polished.model_copy(update={"polished": True})

    def default_grid(self, sol: ThresholdSolution, p: ModelParams) -> np.ndarray:
        c = _Constants.of(p)
        return np.linspace(
            sol.xi_E - 2.0 / abs(c.gamma_n),
            sol.xi_I + 2.0 / abs(c.lam),
            self.config.verify_grid_points,
        )

    def verify(self, sol: ThresholdSolution, p: ModelParams, grid: Optional[np.ndarray] = None) -> VerificationReport:
        """Check every sufficient optimality condition; never raises on a violation."""
        c = _Constants.of(p)
        grid = self.default_grid(sol, p) if grid is None else np.asarray(grid, dtype=float)
        scale = max(1.0, abs(float(reward_h(p, sol.xi_I))))
        tol = self.config.residual_tol * scale

        residuals = boundary_residuals(p, sol.xi_E, sol.xi_I, sol.c1, sol.c2)

        inside_mask = (grid > sol.xi_E) & (grid < sol.xi_I)
        inside_x = grid[inside_mask]
        if inside_x.size:
            v_in, _, _ = _inside(c, sol.xi_E, sol.xi_I, sol.c1, sol.c2, inside_x)
            min_gap = float(np.min(v_in - np.asarray(reward_h(p, inside_x))))
        else:
            min_gap = 0.0

        _, _, curv = _inside(c, sol.xi_E, sol.xi_I, sol.c1, sol.c2, np.array([sol.xi_E, sol.xi_I]))
        _, h2 = reward_h_derivatives(p, np.array([sol.xi_E, sol.xi_I]))
        gap_E = float(curv[0] - h2[0])
        gap_I = float(curv[1] - h2[1])

        outside_x = grid[~inside_mask & (grid != sol.xi_E) & (grid != sol.xi_I)]
        if outside_x.size:
            h = np.asarray(reward_h(p, outside_x))
            h1, h2_out = reward_h_derivatives(p, outside_x)
            excess = apply_generator(p, h, h1, h2_out) + outside_x
            max_excess = float(np.max(excess))
        else:
            max_excess = -math.inf

        checks = {
            "value_matching": abs(residuals[0]) < tol and abs(residuals[2]) < tol,
            "smooth_pasting": abs(residuals[1]) < tol and abs(residuals[3]) < tol,
            "dominance": min_gap >= -tol,
            "curvature": gap_E >= -tol and gap_I >= -tol,
            "generator": max_excess <= tol,
            "ordering": sol.xi_E < sol.x_plus < sol.xi_I and sol.xi_E <= sol.xi0 + tol,
            "coefficient_signs": sol.c1 > 0.0 and sol.c2 > 0.0 and sol.xi_I + p.b - sol.xi1 > 0.0,
        }
        report = VerificationReport(
            residuals=residuals,
            min_value_gap=min_gap,
            curvature_gap_E=gap_E,
            curvature_gap_I=gap_I,
            max_generator_excess=max_excess,
            checks=checks,
            tolerance=tol,
        )
        if not report.passed:
            logger.info("Verification failed", failures=report.failures(), xi_E=sol.xi_E, xi_I=sol.xi_I)
        return report

    def solve_boundary_system(
        self,
        p: ModelParams,
        salvage: float = 0.0,
        guess: Optional[Tuple[float, float]] = None,
    ) -> Tuple[float, float, float, float]:
        """Solve value matching + smooth pasting directly for (xi_E, xi_I, c1, c2).

        Exit pays `salvage`, investment pays h(x - alpha s) + s. Independent of
        the eliminated-equation route used by `solve`.
        """
        c = _Constants.of(p)
        shift = p.alpha * salvage
        if guess is None:
            base = self.solve(p)
            if isinstance(base, NeverInvest):
                raise ParameterError("boundary system has no investment threshold when g <= 0")
            guess = (base.xi_E, base.xi_I)

        def coefficients_at(xi_E: float, xi_I: float) -> Tuple[float, float]:
            slope_I, _ = reward_h_derivatives(p, xi_I - shift)
            return _slope_fit(c, xi_E, xi_I, 0.0, float(slope_I))

        # Unknowns (xi_E, xi_I - xi_E) keep the difference steps relative to a short interval
        def residual(z: np.ndarray) -> np.ndarray:
            xi_E, gap = float(z[0]), float(z[1])
            if gap <= 0.0:
                return np.array([1e6, 1e6])
            c1, c2 = coefficients_at(xi_E, xi_E + gap)
            r = boundary_residuals(p, xi_E, xi_E + gap, c1, c2, salvage=salvage)
            return np.array([r[0], r[2]])

        start = np.array([guess[0], guess[1] - guess[0]], dtype=float)
        result = optimize.root(residual, start, method="hybr", tol=1e-14)
        xi_E, xi_I = float(result.x[0]), float(result.x[0] + result.x[1])
        c1, c2 = coefficients_at(xi_E, xi_I)
        r = boundary_residuals(p, xi_E, xi_I, c1, c2, salvage=salvage)
        worst = max(abs(v) for v in r)
        if worst > self.config.residual_tol:
            raise ConvergenceFailure(
                "boundary system: residuals above tolerance",
                {"residuals": r, "message": result.message, "salvage": salvage},
            )
        return xi_E, xi_I, c1, c2


# Global instance
threshold_solver = ThresholdSolver()


def solve_thresholds(p: ModelParams, cfg: Optional[SolverConfig] = None) -> Union[ThresholdSolution, NeverInvest]:
    """Solve with `cfg`, or with the default solver."""
    solver = threshold_solver if cfg is None else ThresholdSolver(cfg)
    return solver.solve(p)


def verify(sol: ThresholdSolution, p: ModelParams, grid: Optional[np.ndarray] = None) -> VerificationReport:
    return threshold_solver.verify(sol, p, grid)
