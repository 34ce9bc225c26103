"""Simulation and estimation for spin networks measured on a single node."""

__version__ = "0.1.0"
