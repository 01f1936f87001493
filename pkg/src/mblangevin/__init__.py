"""Stochastic-gradient MCMC samplers with adaptive friction thermostats."""

__version__ = "0.1.0"
