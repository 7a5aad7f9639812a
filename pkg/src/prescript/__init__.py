"""Prescriptive decisions from observational data with uncertainty penalties."""

__version__ = "0.1.0"
