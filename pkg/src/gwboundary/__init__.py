"""Simulation and verification tools for the boundary of supercritical
Galton-Watson trees."""

__version__ = "0.1.0"
