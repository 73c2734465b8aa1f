"""Activation shape and plasticity in continual learning: a desk-scale laboratory."""

__version__ = "0.1.0"
