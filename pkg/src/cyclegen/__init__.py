"""Coupled feedforward networks for synthetic battery cycle generation."""

__version__ = "0.1.0"
