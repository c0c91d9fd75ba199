"""Synthetic, perfectly labelled LiDAR scans of procedurally generated tree stands."""

__version__ = "0.1.0"
