"""Exact finite-state machinery for limit theorems of inhomogeneous Markov chains."""

__version__ = "0.1.0"
