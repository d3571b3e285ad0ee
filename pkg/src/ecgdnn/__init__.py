"""Desk-scale 12-lead ECG abnormality classification toolkit."""

from .labels import CLASSES, LEADS

__version__ = "0.1.0"

__all__ = ["CLASSES", "LEADS", "__version__"]
