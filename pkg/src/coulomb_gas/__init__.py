"""Numerical laboratory for Coulomb gases at intermediate temperature."""

__version__ = "0.1.0"
