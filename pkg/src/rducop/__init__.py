"""Combinatorial optimization under uncertainty ranked by Rank Dependent Utility."""

__version__ = "0.1.0"
