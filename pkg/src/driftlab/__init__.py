"""Finite-volume laboratory for parabolic equations with divergence-free drift."""

__version__ = "0.1.0"
