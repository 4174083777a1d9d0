"""Calibrated symmetry-aware prediction sets for planar nonholonomic robots."""

__version__ = "0.1.0"
