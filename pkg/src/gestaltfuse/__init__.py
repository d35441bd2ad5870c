"""Media-memorability prediction pipeline."""

__version__ = "0.1.0"
