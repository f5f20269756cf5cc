"""Toss-juggling trajectory optimisation and simulation."""
__version__ = "0.1.0"
