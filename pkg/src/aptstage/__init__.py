"""Kill-chain stage estimation over fused host/network provenance graphs."""

__version__ = "0.1.0"
