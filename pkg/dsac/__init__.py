"""Capability-based access control for NGSI-LD data spaces."""

__version__ = "v0.3.0"
