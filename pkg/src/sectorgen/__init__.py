"""Generative industry-sector inference over a dynamic sector framework."""

__version__ = "0.1.0"
