"""Safe exploration for tabular RL agents using a learned backward-reachable-set shield."""

__version__ = "0.1.0"
