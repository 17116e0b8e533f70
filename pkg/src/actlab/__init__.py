"""Actuation-space experiments for physics-based motion imitation."""

__version__ = "0.1.0"
