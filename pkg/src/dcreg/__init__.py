"""Learned difference-of-convex regularizers for inverse problems."""

__version__ = "0.1.0"
