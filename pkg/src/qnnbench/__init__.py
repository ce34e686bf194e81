"""Benchmarking randomized quantum and classical neural networks on binary classification data."""

__version__ = "0.1.0"
