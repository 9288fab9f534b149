"""Perturbative truncated-Wigner dynamics of a discrete system in a harmonic bath."""
__version__ = "0.1.0"
