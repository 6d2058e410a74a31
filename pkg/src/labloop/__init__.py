"""Automated two-phase research loop with ablation-based falsification."""

__version__ = "0.1.0"
