"""Gated radial force-law selection from noisy orbit data."""

__version__ = "0.1.0"
