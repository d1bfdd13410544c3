"""Adversarial training on long-tailed data with a balanced self-teacher."""

__version__ = "0.1.0"
