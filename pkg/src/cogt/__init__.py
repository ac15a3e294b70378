"""Causally-ordered generative training over dependency parses."""

__version__ = "0.1.0"
