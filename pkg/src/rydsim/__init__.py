"""Simulator for locally addressed Rydberg spin pairs with dipolar XY exchange."""

__version__ = "0.1.0"
