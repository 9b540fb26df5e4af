"""Consolidated control barrier functions with online gain adaptation."""

__version__ = "0.1.0"
