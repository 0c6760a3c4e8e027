"""Error hierarchy. Each error carries the CLI exit status it maps to."""

from typing import Any, Dict, Optional


class InvestExitError(Exception):
    """Base class for all solver errors."""

    exit_code: int = 1


class ParameterError(InvestExitError, ValueError):
    """Input outside the domain of an operation."""

    exit_code = 2


class ConvergenceFailure(InvestExitError):
    """A root search did not meet its tolerance within the iteration budget."""

    exit_code = 3

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{key}={value}" for key, value in self.diagnostics.items())
        return f"{base} ({details})"


class VerificationFailure(InvestExitError):
    """A candidate solution failed the optimality checks."""

    exit_code = 4
