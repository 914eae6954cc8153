"""Synthetic control estimators and a calibrated simulation harness for stress-testing them."""

__version__ = "0.1.0"
