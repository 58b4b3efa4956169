"""Rooted R-trees inside finite hyperbolic graphs, with checks of their properties."""

__version__ = "0.1.0"
