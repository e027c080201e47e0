"""Learned semantic hashing onto products of spheres, with LSH/ITQ/PQ baselines."""

__version__ = "0.1.0"
