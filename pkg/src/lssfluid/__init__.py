"""Subdivided-latent neural surrogates for 2D smoke flows."""

__version__ = "0.1.0"
