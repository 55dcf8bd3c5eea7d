"""Bayesian inference for stochastic day-to-day route choice dynamics."""

__version__ = "0.1.0"
