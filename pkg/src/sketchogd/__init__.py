"""Orthogonal gradient descent with fixed-memory gradient sketches."""
__version__ = "0.1.0"
