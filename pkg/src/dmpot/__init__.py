"""Bayesian multivariate peaks-over-threshold inference with Dirichlet-mixture dependence."""

__version__ = "0.1.0"
