"""Unsupervised anomaly detection with uniform-contrast random forests."""

__version__ = "0.1.0"
