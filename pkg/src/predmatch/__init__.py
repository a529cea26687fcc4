"""Predictive probability matching priors: residuals, uniformly matching
priors and Monte Carlo coverage checks."""

__version__ = "0.1.0"
