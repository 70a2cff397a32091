"""Sagittal-plane exoskeleton walking simulator and ankle stabilization library."""

__version__ = "0.1.0"
