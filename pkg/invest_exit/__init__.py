"""Invest-or-exit solver - optimal investment and exit thresholds for a declining Brownian profit stream."""

__version__ = "0.1.0"
