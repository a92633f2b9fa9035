"""Remote-peering inference at Internet exchange points."""
__version__ = "0.1.0"
