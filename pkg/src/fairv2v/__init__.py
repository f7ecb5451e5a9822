"""Fairness-aware EV charging with V2G and V2V energy exchange."""

__version__ = "0.1.0"
