"""Directed polymer numerics lab."""

__version__ = "0.1.0"
