"""Split-flow decompositions of geometric flows on the flat torus."""

__version__ = "0.1.0"
