"""Plastic neural memory network for windowed spectral classification."""

__version__ = "0.1.0"
