"""Adversary-side countermeasures: DCT quantization and diffusion purification."""

from .diffpure import DiffpureConfig, diffpure
from .jpeg import JpegConfig, jpeg_like

__all__ = ["DiffpureConfig", "JpegConfig", "diffpure", "jpeg_like"]
