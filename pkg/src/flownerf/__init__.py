"""Joint optimisation of scene geometry, camera poses and dense optical flow."""

__version__ = "1.0.0"
