"""Prometheus-style metrics for solver and simulation runs."""

from functools import wraps
from time import time
from typing import Callable

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

registry = CollectorRegistry()

# Metrics definitions
solver_runs_total = Counter(
    "solver_runs_total",
    "Total number of threshold solves",
    ["outcome"],
    registry=registry,
)

solver_duration_seconds = Histogram(
    "solver_duration_seconds",
    "Threshold solve duration in seconds",
    buckets=[0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0],
    registry=registry,
)

mc_paths_simulated_total = Counter(
    "mc_paths_simulated_total",
    "Total number of simulated Monte Carlo paths",
    registry=registry,
)

mc_duration_seconds = Histogram(
    "mc_duration_seconds",
    "Policy simulation duration in seconds",
    buckets=[0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0],
    registry=registry,
)

sweep_rows_total = Counter(
    "sweep_rows_total",
    "Total number of comparative-statics sweep rows",
    ["status"],
    registry=registry,
)


def track_solve(func: Callable):
    """Decorator to track threshold solver metrics."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time()
        outcome = "error"
        try:
            result = func(*args, **kwargs)
            outcome = type(result).__name__.lower()
            return result
        finally:
            solver_runs_total.labels(outcome=outcome).inc()
            solver_duration_seconds.observe(time() - start_time)

    return wrapper


def track_simulation(func: Callable):
    """Decorator to track Monte Carlo simulation metrics."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time()
        try:
            result = func(*args, **kwargs)
            mc_paths_simulated_total.inc(result.n_paths)
            return result
        finally:
            mc_duration_seconds.observe(time() - start_time)

    return wrapper


def write_metrics(path: str) -> None:
    """Write the registry in text exposition format."""
    write_to_textfile(path, registry)
