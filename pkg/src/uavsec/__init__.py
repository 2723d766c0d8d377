"""Headless deterministic multi-UAV security simulation."""

__version__ = "0.1.0"
