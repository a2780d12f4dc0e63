"""Confidence intervals for MLEs from observed and expected Fisher information."""

__version__ = "0.1.0"
