"""invarlab — invariance, equivariance and factors of variation of embedding functions."""

__version__ = "0.1.0"
