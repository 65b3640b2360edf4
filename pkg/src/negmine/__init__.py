"""Generative hard-negative mining for image-text contrastive learning."""

__version__ = "0.1.0"
