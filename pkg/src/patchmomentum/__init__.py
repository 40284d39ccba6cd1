"""Synthetic feature-learning vs. memorization laboratory for GD and heavy-ball GD+M."""

__version__ = "0.1.0"
