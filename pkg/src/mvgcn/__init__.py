"""Manifold-aware multiview superpixel GCN with evidential fusion for PolSAR."""

__version__ = "0.1.0"
