"""Numerical laboratory for Randers-type Finsler metric measure spaces."""

__version__ = "0.1.0"
