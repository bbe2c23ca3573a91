"""Preventative infeasibility masking for constructive TSPTW / TSPDL policies."""
__version__ = "0.1.0"
