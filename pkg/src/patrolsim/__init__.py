"""Patrol placement simulator and detection-bias audit toolkit."""

__version__ = "0.1.0"
