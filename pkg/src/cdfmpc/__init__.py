"""Stabilising receding-horizon control with control dissipation functions."""

__version__ = "0.1.0"
