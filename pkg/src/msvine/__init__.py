"""Markov-switching regular-vine copula models."""
__version__ = "0.1.0"
