"""Pseudo-label rectification for semi-supervised object detection."""

__version__ = "0.1.0"
