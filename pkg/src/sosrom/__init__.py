"""Stability-certified operator inference for second-order polynomial ROMs."""

__version__ = "0.1.0"
