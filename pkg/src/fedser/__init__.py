"""Robust federated speech emotion recognition: features, attacks, defences, simulation."""

__version__ = "0.1.0"
