"""Secure invocation batching on a simulated fee-market blockchain."""

__version__ = "0.1.0"
