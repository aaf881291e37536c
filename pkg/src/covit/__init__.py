"""Viral genome lineage placement from MinHash fragment features."""

__version__ = "0.1.0"
