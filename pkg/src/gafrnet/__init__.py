"""Graph attention with fuzzy rule fusion for tabular sample classification."""

__version__ = "0.1.0"
