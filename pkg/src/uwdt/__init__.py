"""Underwater acoustic network simulator with local and global digital twins."""

__version__ = "0.1.0"
