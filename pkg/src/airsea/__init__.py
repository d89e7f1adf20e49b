"""Finite element simulator for two coupled 2D fluids joined by a rigid-lid
interface with nonlinear friction."""

__version__ = "0.1.0"
