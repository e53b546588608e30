"""Self-supervised multi-view stereo losses verified by direct depth optimization."""

__version__ = "0.1.0"
