"""Numerical laboratory for DN-map inversion of the dissipative relativistic wave equation."""

__version__ = "0.1.0"
