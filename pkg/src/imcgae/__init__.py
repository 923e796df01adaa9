"""Inductive matrix completion with a graph autoencoder over per-rating-level subgraphs."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
