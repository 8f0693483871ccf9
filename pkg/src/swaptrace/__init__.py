"""Swap atomicity forensics over function-call traces."""

__version__ = "0.1.0"
