"""Detection and relabeling of false negatives in retrieval training data."""

__version__ = "0.1.0"
