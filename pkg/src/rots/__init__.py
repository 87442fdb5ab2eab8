"""Robust training of time-series classifiers with global alignment kernels."""

__version__ = "0.1.0"
