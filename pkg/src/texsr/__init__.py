"""Mesh PBR texture upscaling by multi-view render-space optimization."""

__version__ = "0.1.0"
