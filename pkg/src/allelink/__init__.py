"""Bayesian deduplication of categorical records with size-capped partition priors."""

__version__ = "0.1.0"
