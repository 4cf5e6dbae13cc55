"""Bayesian clustering of zero-inflated compositional count data with a
discrete sparse Dirichlet-multinomial mixture."""

__version__ = "0.1.0"
