"""Multi-pumping (temporal vectorization) toolkit for a data-centric dataflow IR."""

__version__ = "0.1.0"
