"""Biased random walks on Galton-Watson trees: escape probabilities, harmonic measure and its dimension."""

__version__ = "0.1.0"
