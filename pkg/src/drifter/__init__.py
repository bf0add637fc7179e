"""Streaming feature monitoring for sparse ML input streams."""

__version__ = "0.1.0"
