"""Simulation and Bayesian inference for covariate-driven Cox processes."""

__version__ = "0.1.0"
