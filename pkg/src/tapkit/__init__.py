"""Temporal action proposal toolkit: anchors, grouping, refinement, metrics."""

__version__ = "0.1.0"
