"""Federated free-rider simulation with weight-evolving-frequency defense."""

__version__ = "0.1.0"
