"""Provable bounds on strategic rewards in cryptographic self-selection leader election."""

__version__ = "0.1.0"
