"""Audit toolkit for lightly compressed translation models."""

__version__ = "0.1.0"
