"""Choroid segmentation, measurement and method-agreement toolkit for OCT B-scans."""

__version__ = "0.1.0"
