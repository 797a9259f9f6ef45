"""Measurement-induced discord: simulation and analysis of a weak joint two-qubit measurement."""

__version__ = "0.1.0"
