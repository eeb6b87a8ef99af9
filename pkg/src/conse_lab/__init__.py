"""Simulation lab for Pareto-optimal adaptive experiments with heterogeneous effects."""

__version__ = "0.1.0"
