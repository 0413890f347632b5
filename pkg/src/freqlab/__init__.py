"""Numerical laboratory for the frequency function of harmonic functions
vanishing on Lipschitz graphs."""

__version__ = "0.1.0"
