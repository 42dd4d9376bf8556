"""Freight mode choice benchmarking: nine classifiers and a weighted holdout / k-fold evaluation grid."""

__version__ = "0.1.0"
