"""Flat and hierarchical text CNN classifiers for skewed pathology report corpora."""

__version__ = "0.1.0"
