"""Region-adaptive quadtree sparse-diffusion super-resolution."""

__version__ = "0.1.0"
