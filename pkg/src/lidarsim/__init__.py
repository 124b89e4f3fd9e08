"""Deterministic LIDAR-inertial robot simulator and trajectory evaluation toolkit."""

from ._version import __version__

__all__ = ["__version__"]
