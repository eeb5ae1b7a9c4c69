"""Hybrid branch/trunk neural operators for porous-media surrogate modeling."""

__version__ = "0.1.0"
