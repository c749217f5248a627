"""Geometry-aware distance-field priors for articulated motion."""

__version__ = "0.1.0"
