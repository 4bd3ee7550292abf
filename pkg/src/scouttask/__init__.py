"""Decentralised scout/task multi-robot search simulator."""

__version__ = "0.1.0"
