"""Numerical toolkit for degenerate Kolmogorov-type operators with Ornstein-Uhlenbeck drift."""

__version__ = "0.1.0"
