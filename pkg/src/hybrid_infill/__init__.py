"""Evolutionary de-homogenization of hybrid solid-porous infill structures."""

__version__ = "0.1.0"
