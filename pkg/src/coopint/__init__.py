"""Cooperative intersection maneuver planning and mixed-traffic simulation
at a T-junction."""

__version__ = "0.1.0"
