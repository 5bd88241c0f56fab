"""Causally informed classification of supraglacial lake evolution."""

__version__ = "0.1.0"
