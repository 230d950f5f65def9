"""Semi-supervised self-learning with metric-learning losses and weight transfer."""

__version__ = "0.1.0"
