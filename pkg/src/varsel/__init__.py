"""Continual structure learning and planning on discrete state variables."""

__version__ = "0.1.0"
