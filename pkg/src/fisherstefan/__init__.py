"""Numerical laboratory for the Fisher-Stefan moving boundary problem with
negative leakage coefficient."""

__version__ = "0.1.0"
