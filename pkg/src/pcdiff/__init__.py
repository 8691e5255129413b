"""Projection-conditioned point cloud diffusion for single-view reconstruction."""

__version__ = "0.1.0"
