"""Distributed heterogeneous precision-matrix estimation (HEAT / IteHEAT)."""

__version__ = "1.0.0"
