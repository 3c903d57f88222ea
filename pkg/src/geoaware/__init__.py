"""Desk-scale benchmark for viewpoint generalization in imitation-learned manipulation policies."""

__version__ = "0.1.0"
