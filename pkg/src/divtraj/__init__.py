"""Diverse and admissible trajectory forecasting on synthetic road scenes."""

__version__ = "0.1.0"
