"""Realized risk measures, HAR-family forecasting and forecast evaluation."""

__version__ = "0.1.0"
