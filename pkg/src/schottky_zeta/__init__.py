"""Selberg zeta functions, pressure and resonances for Fuchsian Schottky groups."""

__version__ = "0.1.0"

__all__ = ["__version__"]
