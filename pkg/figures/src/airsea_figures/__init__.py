"""Plotting for the coupled two-fluid simulator CSV outputs."""

__version__ = "0.1.0"
