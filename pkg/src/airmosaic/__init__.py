"""Incremental orthophoto and 2.5D elevation mapping from geotagged aerial frames."""

__version__ = "0.1.0"
