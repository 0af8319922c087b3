"""Channel charting with tensor-structured features and a tensor-contraction network."""

__version__ = "0.1.0"
