"""Numerical experiments on machine learning for high-dimensional problems."""

__version__ = "0.1.0"
