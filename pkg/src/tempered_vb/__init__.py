"""Tempered posteriors and their variational approximations."""

__version__ = "0.1.0"
