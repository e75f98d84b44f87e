"""Grounded visual question generation from image features and region captions."""

__version__ = "0.1.0"
