"""Oriented bounding-box pseudo-labels from single-point annotations."""

__version__ = "0.1.0"
