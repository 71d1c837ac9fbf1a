"""Actor-critic image captioning with value-guided decoding, built on numpy."""

__version__ = "0.1.0"
