"""CLuP detection for binary MIMO systems and its random-duality predictions."""

__version__ = "0.1.0"
