"""Desk-scale laboratory for feed-forward identity defense against
diffusion-model personalization."""

__version__ = "0.1.0"
