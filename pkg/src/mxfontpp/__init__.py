"""Few-shot glyph generation with a mixture of heterogeneous aggregation experts."""

__version__ = "0.1.0"
