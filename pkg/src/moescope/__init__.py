"""Sparse contrastive mixture-of-experts CNN and expert-interpretability toolkit."""
__version__ = "0.1.0"
