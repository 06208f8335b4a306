"""Reconstruct decision strategies from market-guessing logs with bipartite
(mixed-membership) stochastic block models."""

__version__ = "0.1.0"
