"""Latent multi-relation reasoning for GAN-prior super-resolution, at desk scale."""

from .config import RunConfig
from .errors import LarenError
from .model import LarenModel

__all__ = ["LarenError", "LarenModel", "RunConfig"]
__version__ = "0.1.0"
