"""Displacement fields of large structures from a single rotating camera."""

__version__ = "0.1.0"
