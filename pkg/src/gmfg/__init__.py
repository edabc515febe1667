"""Graphon mean field games with a representative player."""

__version__ = "0.1.0"
