"""Graphically structured diffusion models over graphical-model nodes."""

__version__ = "0.1.0"
