"""Information-gain driven interleaved text-vision reasoning engine."""

__version__ = "0.1.0"
