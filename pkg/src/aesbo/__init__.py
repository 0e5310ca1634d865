"""Alpha-entropy-search Bayesian optimization with truncated-Gaussian conditioning."""

__version__ = "0.1.0"
