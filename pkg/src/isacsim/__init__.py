"""Monostatic MIMO-OFDM sensing simulator and parameter estimators."""

__version__ = "0.1.0"
