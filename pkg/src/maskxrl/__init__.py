"""Mask-based critical-state explanations for multi-agent PPO learners."""

__version__ = "0.1.0"
