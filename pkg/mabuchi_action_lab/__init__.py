"""Numerical laboratory for the geometry of Kähler potentials on the flat torus."""

__version__ = "1.0.0"
