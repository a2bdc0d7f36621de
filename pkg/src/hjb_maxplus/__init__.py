"""Monotone probabilistic schemes and the probabilistic max-plus method for HJB equations."""

__version__ = "0.1.0"
