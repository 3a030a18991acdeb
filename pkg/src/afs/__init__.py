"""Attention-based supervised feature selection."""

__version__ = "0.1.0"
