"""Numerical toolkit for first Neumann eigenvalues of thin convex planar domains."""

__version__ = "0.1.0"
