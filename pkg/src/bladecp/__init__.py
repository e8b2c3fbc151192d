"""Cascade blade library generation and surface-pressure label classifiers."""

__version__ = "0.1.0"
