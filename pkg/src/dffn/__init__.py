"""Deep feature fusion network for answer quality prediction in cQA forums."""

__version__ = "0.1.0"
