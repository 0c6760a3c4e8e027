import pytest

from invest_exit.schemas import ModelParams, PathConfig, SolverConfig
from invest_exit.services.threshold_solver import solve_thresholds


@pytest.fixture
def base_params():
    """alpha=1, sigma^2=0.5, mu=-1, delta=0.1, k=0.5, b=1 (g=0.6)."""
    return ModelParams.from_sigma2(0.5, alpha=1.0, mu=-1.0, delta=0.1, b=1.0, k=0.5)


@pytest.fixture
def solver_config():
    return SolverConfig()


@pytest.fixture
def solved(base_params):
    return solve_thresholds(base_params)


@pytest.fixture
def fast_path_config():
    """Coarse grid for unit-test scale runs; build with .model_copy(update=...)."""
    return PathConfig(x0=0.0, dt=2e-3, horizon=10.0, n_paths=20_000, seed=7, block_size=1024, workers=2)
