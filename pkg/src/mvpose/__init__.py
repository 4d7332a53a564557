"""Uncertainty-aware multi-view 3D keypoint triangulation."""

__version__ = "0.1.0"
