"""Viscous approximation of Mather measures for time-periodic Hamiltonians."""

__version__ = "0.1.0"
