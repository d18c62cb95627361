"""Antivirus signature normalization and cross-engine consensus analysis."""

__version__ = "0.1.0"
