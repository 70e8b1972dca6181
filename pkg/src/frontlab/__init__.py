"""Numerical laboratory for front propagation and mixing in periodic flows."""

__version__ = "0.1.0"
