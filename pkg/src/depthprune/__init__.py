"""Entropy-guided unstructured pruning that linearizes and folds away layers."""

__version__ = "0.1.0"
