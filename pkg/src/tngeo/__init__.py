"""Tensor-network generator-enhanced optimisation for the TSP."""

__version__ = "0.1.0"
