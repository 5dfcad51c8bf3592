"""Interval-level cellular traffic forecasting, burst prediction and app classification."""

__version__ = "0.1.0"
