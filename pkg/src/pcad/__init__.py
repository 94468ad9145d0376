"""Unsupervised point-cloud anomaly detection.

A feature branch (FPFH descriptors scored against a coreset memory bank) and a
reconstruction branch (GAN inversion, projected nearest-input distance) are
paired on a common raster and fused by a one-class SVM.
"""
from .errors import PcadError, ValidationError
from .geometry import PointCloud

__version__ = "0.1.0"
__all__ = ["PointCloud", "PcadError", "ValidationError", "__version__"]
