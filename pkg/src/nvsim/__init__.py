"""Simulation toolkit for the NV-centre electron / 14N nuclear spin system."""

__version__ = "0.1.0"
