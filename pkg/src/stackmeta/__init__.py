"""Meta-learned follower response models for leader-follower LQG guidance."""

__version__ = "0.1.0"
