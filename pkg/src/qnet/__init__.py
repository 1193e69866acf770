"""Excitation transport efficiency on noisy random-removal and small-world networks."""

__version__ = "0.1.0"
