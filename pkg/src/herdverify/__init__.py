"""Batch verifier for monotonic traversals of arrays, lists and trees in a C subset."""

__version__ = "0.1.0"
