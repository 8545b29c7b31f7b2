"""Approximate Bayesian computation by Subset Simulation."""

__version__ = "0.1.0"
