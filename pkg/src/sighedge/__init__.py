"""Signature-based pricing and hedging of path-dependent derivatives."""

__version__ = "0.1.0"
