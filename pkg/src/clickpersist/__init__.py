"""Causal estimation of click persistence in repeated phishing-exposure panels."""

__version__ = "0.1.0"
