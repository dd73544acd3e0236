"""churnlab: measure, predict, and regularize policy/value churn in deep RL."""

__version__ = "0.1.0"
