"""Representation-uncertainty propagation for calibrated sensor outputs."""

__version__ = "0.1.0"
