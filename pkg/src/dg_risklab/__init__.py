"""Exact Bayes risks and ERM experiments for pooled vs. domain-informed classification."""

__version__ = "0.1.0"
