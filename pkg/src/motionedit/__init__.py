"""Motion-guided diffusion editing over procedural image priors."""

__version__ = "0.1.0"
