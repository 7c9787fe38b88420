"""One-dimensional cross-diffusion population solver."""

__version__ = "0.1.0"
