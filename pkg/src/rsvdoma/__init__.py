"""Covariance-driven SSI with randomized SVD and 3D stabilization diagrams."""

__version__ = "0.1.0"
