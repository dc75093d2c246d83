"""Similarity-driven resilient model selection for multivariate
time-series classification under adversarial attacks."""

__version__ = "0.1.0"
