"""Offline toolkit for handheld demonstration recordings."""

__version__ = "0.1.0"
