"""Self-assignment representation learning laboratory."""

__version__ = "0.1.0"
