"""Paillier-protected distributed ADMM for LASSO."""

__version__ = "0.1.0"
