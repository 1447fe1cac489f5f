"""Spatiotemporal-attention sequence models for multivariate forecasting."""

__version__ = "0.1.0"
