"""Simulation toolkit for a Rabi-oscillation NV-ensemble magnetometer."""

__version__ = "0.1.0"
