"""Embedded Bayesian agents: universes, mixtures, planners and equilibrium checks."""

__version__ = "0.1.0"
