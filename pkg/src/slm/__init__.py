"""Structural language model for any-code completion over a small Java-like language."""

__version__ = "0.1.0"
