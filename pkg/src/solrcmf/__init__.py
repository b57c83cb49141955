"""Sparse and orthogonal low-rank collective matrix factorization."""

__version__ = "0.1.0"
