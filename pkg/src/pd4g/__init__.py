"""pd4g: layered progressive codec, desk-scale mask optimizer, and streaming simulator."""

__version__ = "0.1.0"
