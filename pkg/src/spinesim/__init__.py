"""Simulation and verification of branching Markov processes via the spine decomposition."""

__version__ = "0.1.0"
