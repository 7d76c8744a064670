"""Group-supervised learning with a swap-disentangled auto-encoder."""

__version__ = "0.1.0"
