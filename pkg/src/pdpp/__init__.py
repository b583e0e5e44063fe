"""Exactly solvable Pearson particle systems: kernels, Fredholm determinants and Monte Carlo oracles."""

__version__ = "0.1.0"
