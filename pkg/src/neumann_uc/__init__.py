"""Numerical laboratory for weighted energy (Carleman / frequency function)
estimates of parabolic equations with conormal Neumann boundary conditions."""

__version__ = "0.1.0"
