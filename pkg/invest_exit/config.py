"""Application configuration using Pydantic Settings."""

from typing import Literal, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="INVEST_EXIT_",
        case_sensitive=False,
    )

    # App Settings
    app_name: str = "invest-exit"

    # Default model parameters (worked example: alpha=1, sigma^2=0.5, mu=-1, delta=0.1, k=0.5)
    alpha: float = 1.0
    mu: float = -1.0
    sigma2: float = 0.5
    delta: float = 0.1
    k: float = 0.5
    b: float = 1.0

    # Solver Settings
    inner_xtol: float = 1e-12
    outer_xtol: float = 1e-11
    residual_tol: float = 1e-9
    max_iter: int = 200
    bracket_max_expansions: int = 60
    root_method: Literal["brentq", "bisect"] = "brentq"
    verify_grid_points: int = 2000
    root_scan_points: int = 64

    # Comparative statics
    fd_relative_step: float = 1e-4
    richardson: bool = False

    # Monte Carlo Settings
    mc_paths: int = 200_000
    mc_dt: Optional[float] = None  # None -> 1e-4 / alpha
    mc_horizon: Optional[float] = None  # None -> 40 / alpha
    mc_seed: int = 20090424
    mc_block_size: int = 1024
    mc_workers: Optional[int] = None

    # Logging
    log_level: str = "INFO"


settings = Settings()
