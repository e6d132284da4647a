"""Robust two-dimensional line spectral estimation against spiky noise."""

__version__ = "0.1.0"
