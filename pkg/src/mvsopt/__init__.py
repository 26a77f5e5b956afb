"""Multi-view stereo depth estimation by direct minimisation of a multi-metric loss."""

from .scene_io import Camera, PointCloud, Scene

__version__ = "0.1.0"

__all__ = ["Camera", "PointCloud", "Scene"]
