"""Four-dimensional BB84 with vector/scalar OAM modes and deterministic detection."""

__version__ = "0.1.0"
