"""Streaming inverse text normalization: chunked transformer tagging plus per-category WFSTs."""

__version__ = "0.1.0"
