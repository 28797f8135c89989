"""Cumulative-logit day-to-day route choice dynamics and Wardrop equilibrium diagnostics."""

__version__ = "0.1.0"
