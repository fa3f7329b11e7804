"""Dual-domain statistically guided multi-prototype meta-learning."""
__version__ = "0.1.0"
