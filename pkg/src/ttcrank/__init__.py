"""Test-time-compute reranking over frozen embeddings."""

__version__ = "0.1.0"
