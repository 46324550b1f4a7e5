"""Stochastic multi-area load-frequency control with wind turbines."""

__version__ = "0.1.0"
