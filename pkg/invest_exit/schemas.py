"""Pydantic schemas for model parameters, solutions and simulation records."""

import math
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator


class ModelParams(BaseModel):
    """The six primitives of the invest-or-exit problem."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    alpha: float = Field(..., gt=0.0, description="Discount rate (1/time)")
    mu: float = Field(..., description="Pre-investment drift (profit/time^2)")
    sigma2: float = Field(..., gt=0.0, description="Variance rate sigma^2 (profit^2/time)")
    delta: float = Field(0.0, ge=0.0, description="Drift boost on investment")
    b: float = Field(..., description="Profit-rate boost on investment (profit/time)")
    k: float = Field(..., gt=0.0, description="Investment cost (profit)")

    @classmethod
    def from_sigma2(cls, sigma2: float, **kwargs) -> "ModelParams":
        """Build from the variance sigma^2."""
        if not sigma2 > 0.0:
            raise ValueError("sigma2 must be positive")
        return cls(sigma2=sigma2, **kwargs)

    @classmethod
    def from_g(cls, g: float, **kwargs) -> "ModelParams":
        """Build with b chosen so that the net gain rate equals g."""
        alpha, delta, k = kwargs["alpha"], kwargs.get("delta", 0.0), kwargs["k"]
        return cls(b=g - delta / alpha + k * alpha, **kwargs)

    @computed_field
    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @computed_field
    @property
    def g(self) -> float:
        """Net discounted gain rate b + delta/alpha - k*alpha."""
        return self.b + self.delta / self.alpha - self.k * self.alpha

    @computed_field
    @property
    def declining(self) -> bool:
        """True when the profit stream declines before and after investment."""
        return self.mu < 0.0 and self.mu + self.delta < 0.0

    def with_sigma2(self, sigma2: float) -> "ModelParams":
        return self.model_copy(update={"sigma2": sigma2})

    def with_g(self, g: float) -> "ModelParams":
        return self.model_copy(update={"b": g - self.delta / self.alpha + self.k * self.alpha})

    def replace(self, **changes) -> "ModelParams":
        """Copy with changes, re-running validation."""
        data = self.model_dump(include={"alpha", "mu", "sigma2", "delta", "b", "k"})
        data.update(changes)
        return ModelParams(**data)


class ExitModel(BaseModel):
    """Single-drift exit problem: exponents, threshold and the data needed to evaluate V."""

    model_config = ConfigDict(frozen=True)

    nu: float = Field(..., description="Drift of this exit problem")
    alpha: float = Field(..., description="Discount rate")
    sigma: float = Field(..., description="Volatility")
    psi: float = Field(..., description="Positive root psi(nu) (1/profit)")
    phi: float = Field(..., description="Negative root phi(nu) (1/profit)")
    xi: float = Field(..., description="Exit threshold xi(nu) (profit/time)")


class InvestmentTerms(BaseModel):
    """Quantities of the investment reward h."""

    model_config = ConfigDict(frozen=True)

    g: float = Field(..., description="Net gain rate (profit/time)")
    x_plus: Optional[float] = Field(None, description="Break-even profit rate; None when never investing")
    xi0: float = Field(..., description="Exit threshold without the investment option")
    xi1: float = Field(..., description="Post-investment exit threshold")
    gamma_p: float = Field(..., description="psi(mu)")
    gamma_n: float = Field(..., description="phi(mu)")
    lam: float = Field(..., description="phi(mu + delta)")
    never_invest: bool = Field(..., description="True iff g <= 0")


class SolverConfig(BaseModel):
    """Tolerances and budgets of the free-boundary solver."""

    model_config = ConfigDict(frozen=True)

    inner_xtol: float = Field(1e-12, gt=0.0, description="Tolerance on Delta_E0 for fixed Delta_IE")
    outer_xtol: float = Field(1e-11, gt=0.0, description="Tolerance on Delta_IE")
    residual_tol: float = Field(1e-9, gt=0.0, description="Acceptance tolerance of boundary residuals")
    max_iter: int = Field(200, ge=1)
    bracket_max_expansions: int = Field(60, ge=1)
    root_method: Literal["brentq", "bisect"] = "brentq"
    verify_grid_points: int = Field(2000, ge=10)
    root_scan_points: int = Field(64, ge=2)

    @classmethod
    def from_settings(cls, settings) -> "SolverConfig":
        return cls(
            inner_xtol=settings.inner_xtol,
            outer_xtol=settings.outer_xtol,
            residual_tol=settings.residual_tol,
            max_iter=settings.max_iter,
            bracket_max_expansions=settings.bracket_max_expansions,
            root_method=settings.root_method,
            verify_grid_points=settings.verify_grid_points,
            root_scan_points=settings.root_scan_points,
        )


class ThresholdSolution(BaseModel):
    """Optimal pre-investment policy (xi_E, xi_I) with value-function coefficients."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["invest"] = "invest"
    xi_E: float = Field(..., description="Pre-investment exit threshold")
    xi_I: float = Field(..., description="Investment threshold")
    xi0: float = Field(..., description="Exit threshold without the investment option")
    xi1: float = Field(..., description="Post-investment exit threshold")
    a1: float = Field(..., description="Coefficient of exp(gamma_p x)")
    a2: float = Field(..., description="Coefficient of exp(gamma_n x)")
    c1: float = Field(..., description="a1 * exp(gamma_p xi_I)")
    c2: float = Field(..., description="a2 * exp(gamma_n xi_E)")
    x_plus: float = Field(..., description="Break-even profit rate")
    g: float = Field(..., description="Net gain rate")
    residuals: Tuple[float, float, float, float] = Field(
        ..., description="Value-matching and smooth-pasting residuals at xi_E and xi_I"
    )
    delta_E0: float = Field(..., description="xi_E - xi0 as solved (kept separately; may be far below ulp(xi0))")
    delta_IE: float = Field(..., description="xi_I - xi_E as solved")
    iterations: int = Field(0, description="Outer root-search function evaluations")
    extra_roots: int = Field(0, description="Additional sign changes seen while bracketing")
    polished: bool = Field(False, description="Refined on the direct boundary system after the nested search")


class NeverInvest(BaseModel):
    """Outcome when g <= 0: investment is never optimal and the policy is exit at xi0."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["never_invest"] = "never_invest"
    xi0: float = Field(..., description="Exit threshold of the exit-only problem")
    g: float = Field(..., description="Net gain rate (<= 0)")


class VerificationReport(BaseModel):
    """Numerical check of every sufficient optimality condition."""

    model_config = ConfigDict(frozen=True)

    residuals: Tuple[float, float, float, float] = Field(
        ..., description="Residuals of value matching / smooth pasting at xi_E and xi_I"
    )
    min_value_gap: float = Field(..., description="min of V1 - h on the continuation region grid")
    curvature_gap_E: float = Field(..., description="V1''(xi_E+) - h''(xi_E)")
    curvature_gap_I: float = Field(..., description="V1''(xi_I-) - h''(xi_I)")
    max_generator_excess: float = Field(..., description="max of A V1 + x outside the continuation region")
    checks: Dict[str, bool] = Field(..., description="Pass/fail per condition")
    tolerance: float = Field(..., description="Tolerance used for the residual checks")

    @computed_field
    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> List[str]:
        return [name for name, ok in self.checks.items() if not ok]


class AsymptoticReport(BaseModel):
    """Small-g or large-b leading-order expansion of the threshold gaps."""

    model_config = ConfigDict(frozen=True)

    regime: Literal["small_g", "large_b"]
    g: float
    delta_E0_approx: float
    delta_IE_approx: float
    theta: Optional[float] = Field(None, description="Large-b constant theta")
    z: Optional[float] = Field(None, description="-lambda (theta + alpha k + 1/gamma_n - 1/lambda)")
    c_delta: Optional[float] = Field(None, description="Small-g constant C(delta)")
    in_regime: bool = Field(..., description="Whether g falls inside the regime gate")


class ExponentDerivatives(BaseModel):
    """Closed-form partial derivatives of psi(nu) and phi(nu)."""

    model_config = ConfigDict(frozen=True)

    dpsi_dsigma2: float
    dphi_dsigma2: float
    dpsi_dnu: float
    dphi_dnu: float
    dpsi_dalpha: float
    dphi_dalpha: float


class StaticsRow(BaseModel):
    """One comparative-statics record of a sweep."""

    model_config = ConfigDict(frozen=True)

    g: float
    b: float
    alpha: float
    mu: float
    sigma2: float
    delta: float
    k: float
    xi_0: float
    xi_1: float
    xi_E: float = math.nan
    xi_I: float = math.nan
    d_xiE_d_sigma2: float = math.nan
    d_xiI_d_sigma2: float = math.nan
    d_xiI_d_mu: float = math.nan
    step_sigma2: float = math.nan
    step_mu: float = math.nan
    solver_status: str = "ok"


class SalvageParams(BaseModel):
    """Lump-sum value received on exit (any sign)."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    s: float = Field(0.0, description="Salvage / switching value (profit units)")


class PolicySpec(BaseModel):
    """A threshold policy: exit below exit_pre, invest above invest, then exit below exit_post."""

    model_config = ConfigDict(frozen=True)

    exit_pre: float = Field(..., description="Exit threshold before investing")
    invest: float = Field(math.inf, description="Investment threshold (inf = never invest)")
    exit_post: Optional[float] = Field(None, description="Exit threshold after investing")

    @model_validator(mode="after")
    def _check_order(self) -> "PolicySpec":
        if not math.isfinite(self.exit_pre):
            raise ValueError("exit_pre must be finite")
        if not self.exit_pre < self.invest:
            raise ValueError("exit_pre must be below invest")
        if math.isfinite(self.invest) and self.exit_post is None:
            raise ValueError("exit_post is required when invest is finite")
        if self.exit_post is not None and not math.isfinite(self.exit_post):
            raise ValueError("exit_post must be finite")
        return self

    @classmethod
    def from_solution(cls, sol: ThresholdSolution) -> "PolicySpec":
        return cls(exit_pre=sol.xi_E, invest=sol.xi_I, exit_post=sol.xi1)

    @classmethod
    def exit_only(cls, threshold: float) -> "PolicySpec":
        return cls(exit_pre=threshold)


class PathConfig(BaseModel):
    """Discretisation and sampling settings for the Monte Carlo oracle."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x0: float = Field(..., description="Initial profit rate")
    dt: float = Field(..., gt=0.0, description="Time step")
    horizon: float = Field(..., gt=0.0, description="Truncation time T")
    n_paths: int = Field(..., ge=1, description="Number of paths")
    seed: int = Field(0, ge=0, lt=2**64, description="64-bit seed")
    block_size: int = Field(1024, ge=1, description="Lanes per RNG stream")
    workers: Optional[int] = Field(None, ge=1, description="Thread pool size (None = CPU count)")


class SimEstimate(BaseModel):
    """Monte Carlo estimate of a policy's expected discounted return."""

    model_config = ConfigDict(frozen=True)

    mean: float
    std_error: float = Field(..., ge=0.0)
    p_invest_hat: float = Field(..., ge=0.0, le=1.0)
    p_invest_se: float = Field(..., ge=0.0)
    tail_bound: float = Field(..., ge=0.0)
    n_paths: int


class GridCell(BaseModel):
    """One evaluated policy of a grid search."""

    model_config = ConfigDict(frozen=True)

    policy: PolicySpec
    mean: float
    std_error: float
    diff_vs_center: float = Field(..., description="Paired mean difference to the center policy")
    diff_std_error: float = Field(..., description="Standard error of the paired difference")


class GridSearchResult(BaseModel):
    """Value surface of a common-random-number grid search."""

    model_config = ConfigDict(frozen=True)

    center: GridCell
    best: GridCell
    cells: List[GridCell]

    def max_excess_in_se(self) -> float:
        """Largest improvement over the center, in units of its paired standard error."""
        worst = 0.0
        for cell in self.cells:
            if cell.diff_std_error > 0.0:
                worst = max(worst, cell.diff_vs_center / cell.diff_std_error)
            elif cell.diff_vs_center > 0.0:
                worst = math.inf
        return worst
