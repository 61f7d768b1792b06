"""Spectral neural-ODE solvers for time-dependent PDEs on box domains."""

__version__ = "0.1.0"
