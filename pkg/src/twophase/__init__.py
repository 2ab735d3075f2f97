"""Two-phase flow with phase transition on a flattened periodic strip."""

__version__ = "0.1.0"
