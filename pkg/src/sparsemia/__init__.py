"""Sparse neural networks (IMP and butterfly factorizations) versus
shadow-model membership inference attacks."""

__version__ = "0.1.0"
