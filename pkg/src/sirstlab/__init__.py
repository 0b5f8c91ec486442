"""Infrared small target detection lab."""

__version__ = "0.1.0"
