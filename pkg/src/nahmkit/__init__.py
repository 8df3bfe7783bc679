"""Numerical toolkit for monopole moduli, braid transport and Nahm-pole model solutions."""

__version__ = "0.1.0"
